use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum StadError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("graph error: {0}")]
    Graph(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("image error at {path}: {message}")]
    Image { path: PathBuf, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl StadError {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        StadError::Shape(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        StadError::InvalidArgument(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        StadError::Format(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        StadError::Data(msg.into())
    }
}

pub type Result<T, E = StadError> = std::result::Result<T, E>;
