//! Flat run configuration shared by every pipeline stage.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adam::AdamConfig;
use crate::arch::{Architecture, DEFAULT_DESCRIPTOR_DIM, SUPPORTED_PATCH_SIZES};
use crate::error::{Result, StadError};
use crate::student::{InputMode, StudentTrainConfig};
use crate::teacher::{AugmentConfig, TeacherLossWeights, TeacherTrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Category directory in MVTec layout.
    pub dataset: PathBuf,
    pub run_dir: PathBuf,
    /// Directory of generic images for teacher pretraining.
    pub teacher_corpus: Option<PathBuf>,
    /// Distillation-target file; `{p}` is replaced by the patch size.
    pub distill_targets: Option<String>,
    pub image_side: usize,
    pub scales: Vec<usize>,
    pub descriptor_dim: usize,
    pub width_divisor: usize,
    pub input_mode: InputMode,
    pub seed: u64,

    pub lambda_k: f32,
    pub lambda_m: f32,
    pub lambda_c: f32,
    pub margin: f32,
    pub teacher_iterations: usize,
    pub teacher_batch_size: usize,
    pub teacher_lr: f32,
    pub teacher_weight_decay: f32,

    pub students: usize,
    pub student_epochs: usize,
    pub student_lr: f32,
    pub student_weight_decay: f32,

    pub adam_beta1: f32,
    pub adam_beta2: f32,
    pub adam_eps: f32,

    pub fpr_limit: f64,
    pub max_curve_points: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: PathBuf::from("data"),
            run_dir: PathBuf::from("run"),
            teacher_corpus: None,
            distill_targets: None,
            image_side: 256,
            scales: vec![65],
            descriptor_dim: DEFAULT_DESCRIPTOR_DIM,
            width_divisor: 1,
            input_mode: InputMode::Dense,
            seed: 0,
            lambda_k: 1.0,
            lambda_m: 0.0,
            lambda_c: 1.0,
            margin: 1.0,
            teacher_iterations: 50_000,
            teacher_batch_size: 64,
            teacher_lr: 2e-4,
            teacher_weight_decay: 1e-5,
            students: 3,
            student_epochs: 100,
            student_lr: 1e-4,
            student_weight_decay: 1e-5,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            fpr_limit: 0.3,
            max_curve_points: 10_000,
        }
    }
}

fn config_error(msg: impl Into<String>) -> StadError {
    StadError::Config(msg.into())
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| config_error(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_error(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.scales.is_empty() {
            return Err(config_error("at least one scale is required"));
        }
        for &p in &self.scales {
            if !SUPPORTED_PATCH_SIZES.contains(&p) {
                return Err(config_error(format!("scale {p} is not one of {SUPPORTED_PATCH_SIZES:?}")));
            }
        }
        let mut sorted = self.scales.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.scales.len() {
            return Err(config_error("scales must be distinct"));
        }
        let max_p = *sorted.last().expect("non-empty");
        if self.input_mode == InputMode::Dense && self.image_side < max_p {
            return Err(config_error(format!("image side {} is below the largest scale {max_p}", self.image_side)));
        }
        let positive = [
            ("teacher_lr", self.teacher_lr),
            ("student_lr", self.student_lr),
            ("margin", self.margin),
            ("adam_eps", self.adam_eps),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(config_error(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("teacher_weight_decay", self.teacher_weight_decay), ("student_weight_decay", self.student_weight_decay)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(config_error(format!("{name} must be non-negative, got {v}")));
            }
        }
        for (name, v) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(config_error(format!("{name} must lie in [0, 1), got {v}")));
            }
        }
        if self.descriptor_dim == 0 || self.width_divisor == 0 || self.image_side == 0 {
            return Err(config_error("descriptor_dim, width_divisor and image_side must be positive"));
        }
        if self.students == 0 {
            return Err(config_error("students must be at least 1"));
        }
        if self.teacher_batch_size < 2 && self.lambda_c > 0.0 {
            return Err(config_error("compactness needs a teacher batch of at least 2"));
        }
        if !(self.fpr_limit > 0.0 && self.fpr_limit <= 1.0) {
            return Err(config_error(format!("fpr_limit must lie in (0, 1], got {}", self.fpr_limit)));
        }
        self.loss_weights().validate().map_err(|e| config_error(e.to_string()))?;
        if self.lambda_k > 0.0 && self.distill_targets.is_none() {
            return Err(config_error("lambda_k > 0 requires distill_targets"));
        }
        for p in &self.scales {
            self.architecture(*p).map_err(|e| config_error(e.to_string()))?;
        }
        Ok(())
    }

    pub fn loss_weights(&self) -> TeacherLossWeights {
        TeacherLossWeights {
            lambda_k: self.lambda_k,
            lambda_m: self.lambda_m,
            lambda_c: self.lambda_c,
            margin: self.margin,
        }
    }

    fn adam(&self, lr: f32, weight_decay: f32) -> AdamConfig {
        AdamConfig {
            lr,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
            weight_decay,
        }
    }

    pub fn architecture(&self, patch_size: usize) -> Result<Architecture> {
        Architecture::scaled(patch_size, self.descriptor_dim, self.width_divisor)
    }

    pub fn teacher_config(&self, patch_size: usize) -> Result<TeacherTrainConfig> {
        Ok(TeacherTrainConfig {
            patch_size,
            descriptor_dim: self.descriptor_dim,
            width_divisor: self.width_divisor,
            weights: self.loss_weights(),
            adam: self.adam(self.teacher_lr, self.teacher_weight_decay),
            batch_size: self.teacher_batch_size,
            iterations: self.teacher_iterations,
            seed: crate::seeding::derive_seed(self.seed, &[400, patch_size as u64]),
            augment: AugmentConfig::new(patch_size)?,
        })
    }

    pub fn student_config(&self, patch_size: usize) -> StudentTrainConfig {
        StudentTrainConfig {
            students: self.students,
            epochs: self.student_epochs,
            adam: self.adam(self.student_lr, self.student_weight_decay),
            seed: crate::seeding::derive_seed(self.seed, &[401, patch_size as u64]),
            mode: self.input_mode,
        }
    }

    pub fn distill_path(&self, patch_size: usize) -> Option<PathBuf> {
        self.distill_targets
            .as_ref()
            .map(|t| PathBuf::from(t.replace("{p}", &patch_size.to_string())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_need_distillation_targets() {
        assert!(RunConfig::default().validate().is_err());
        let cfg = RunConfig {
            distill_targets: Some("d_{p}.bin".into()),
            ..Default::default()
        };
        cfg.validate().unwrap();
        assert_eq!(cfg.distill_path(33).unwrap(), PathBuf::from("d_33.bin"));
    }

    #[test]
    fn json_round_trip_and_rejections() {
        let cfg = RunConfig {
            lambda_k: 0.0,
            lambda_m: 1.0,
            scales: vec![17, 33],
            ..Default::default()
        };
        assert_eq!(RunConfig::from_json(&cfg.to_json()).unwrap(), cfg);
        assert!(RunConfig::from_json(r#"{"scales": [16], "lambda_k": 0}"#).is_err());
        assert!(RunConfig::from_json(r#"{"lambda_k": 0, "unknown": 1}"#).is_err());
        assert!(RunConfig::from_json(r#"{"lambda_k": 0, "student_lr": 0}"#).is_err());
        assert!(matches!(RunConfig::from_json("{"), Err(StadError::Config(_))));
    }
}
