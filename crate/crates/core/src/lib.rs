//! Student–teacher anomaly detection.
//!
//! A teacher network maps every `p×p` image window to a descriptor. An
//! ensemble of students with the same architecture learns to regress the
//! teacher's normalized descriptors on anomaly-free images. At test time the
//! students' regression error and their disagreement mark anomalous pixels.

pub mod adam;
pub mod arch;
pub mod benchmark;
pub mod config;
pub mod dataset;
pub mod dense;
pub mod error;
pub mod formats;
pub mod graph;
pub mod imaging;
pub mod metrics;
pub mod ops;
pub mod pipeline;
pub mod seeding;
pub mod student;
pub mod synthetic;
pub mod teacher;
pub mod tensor;

pub use error::{Result, StadError};
pub use tensor::Tensor;
