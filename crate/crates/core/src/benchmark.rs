//! End-to-end run on a generated texture category: teacher pretraining on a
//! disjoint generic corpus, student training, calibration, and evaluation.

use serde::{Deserialize, Serialize};

use crate::dataset::holdout_split;
use crate::dense::densify;
use crate::error::{Result, StadError};
use crate::metrics::{pro_curve, integrate_pro_curve, roc_auc, BinaryMask, ProCurvePoint, DEFAULT_FPR_LIMIT};
use crate::seeding::derive_seed;
use crate::student::{
    calibrate, compute_feature_stats, train_students, FeatureStats, InputMode, ScaleArtifacts, ScoreCalibration,
    StudentEnsemble, StudentTrainConfig,
};
use crate::synthetic::{generate_category, generate_teacher_corpus, SyntheticConfig};
use crate::teacher::{train_teacher, TeacherCheckpoint, TeacherLossWeights, TeacherTrainConfig};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub seed: u64,
    pub category: SyntheticConfig,
    pub corpus_images: usize,
    pub corpus_side: usize,
    pub teacher: TeacherTrainConfig,
    pub students: StudentTrainConfig,
    pub max_curve_points: usize,
}

impl BenchmarkConfig {
    /// `p = 17`, self-supervised teacher (`λm = λc = 1`) for 10 000
    /// iterations, three students for 30 epochs, on 100 training and 20
    /// defective test images of 128×128. Network widths are divided by 16
    /// to fit a single CPU core.
    pub fn standard(seed: u64) -> Result<Self> {
        let mut teacher = TeacherTrainConfig::new(17)?;
        teacher.width_divisor = 16;
        teacher.descriptor_dim = 32;
        teacher.weights = TeacherLossWeights::self_supervised();
        teacher.batch_size = 32;
        teacher.iterations = 10_000;
        teacher.adam.lr = 1e-3;
        let students = StudentTrainConfig {
            students: 3,
            epochs: 30,
            ..Default::default()
        };
        Ok(BenchmarkConfig {
            seed,
            category: SyntheticConfig::default(),
            corpus_images: 200,
            corpus_side: 128,
            teacher,
            students,
            max_curve_points: 10_000,
        })
    }
}

#[derive(Clone, Debug)]
pub struct BenchmarkOutcome {
    pub teacher: TeacherCheckpoint,
    pub stats: FeatureStats,
    pub ensemble: StudentEnsemble,
    pub calibration: ScoreCalibration,
    pub maps: Vec<Tensor>,
    pub curve: Vec<ProCurvePoint>,
    pub pro_auc: f64,
    /// `(name, label, score)` per test image; the score is the map maximum.
    pub image_scores: Vec<(String, String, f32)>,
    pub image_roc_auc: f64,
}

pub fn run_synthetic_benchmark(cfg: &BenchmarkConfig, mut log: impl FnMut(&str)) -> Result<BenchmarkOutcome> {
    let category = generate_category(&cfg.category, derive_seed(cfg.seed, &[1]))?;
    let corpus = generate_teacher_corpus(cfg.corpus_images, cfg.corpus_side, derive_seed(cfg.seed, &[2]));

    let mut tcfg = cfg.teacher.clone();
    tcfg.seed = derive_seed(cfg.seed, &[3]);
    let every = (tcfg.iterations / 10).max(1);
    let teacher = train_teacher(&corpus, None, &tcfg, |it, loss| {
        if (it + 1) % every == 0 {
            log(&format!("teacher iteration {} loss {loss:.4}", it + 1));
        }
    })?;
    let dense_teacher = densify(&teacher.net)?;

    let (train_idx, val_idx) = holdout_split(category.train.len(), derive_seed(cfg.seed, &[5]));
    let train: Vec<Tensor> = train_idx.iter().map(|&i| category.train[i].clone()).collect();
    let validation: Vec<Tensor> = if val_idx.is_empty() {
        train.clone()
    } else {
        val_idx.iter().map(|&i| category.train[i].clone()).collect()
    };
    let stats = compute_feature_stats(&dense_teacher, &train, InputMode::Dense)?;
    let mut scfg = cfg.students.clone();
    scfg.seed = derive_seed(cfg.seed, &[4]);
    let ensemble = train_students(&dense_teacher, &stats, &train, &scfg, |epoch, losses| {
        log(&format!("student epoch {} losses {losses:?}", epoch + 1));
    })?;

    let mut e_maps = Vec::new();
    let mut v_maps = Vec::new();
    for img in &validation {
        let (e, v) = crate::student::raw_scores(&ensemble, &dense_teacher, &stats, img, InputMode::Dense)?;
        e_maps.push(e);
        v_maps.push(v);
    }
    let calibration = calibrate(&e_maps, &v_maps)?;
    let scale = ScaleArtifacts::new(dense_teacher, ensemble, stats, calibration)?;

    let mut maps = Vec::new();
    let mut masks = Vec::new();
    let mut image_scores = Vec::new();
    for (i, t) in category.test.iter().enumerate() {
        let map = scale.score_map(&t.image)?;
        let (_, h, w) = t.image.dims3()?;
        masks.push(t.mask.clone().unwrap_or_else(|| BinaryMask::empty(h, w)));
        let max = map.data().iter().copied().fold(f32::NEG_INFINITY, f32::max);
        image_scores.push((format!("{i:03}"), t.label.clone(), max));
        maps.push(map);
    }
    if maps.is_empty() {
        return Err(StadError::invalid("benchmark has no test images"));
    }
    let curve = pro_curve(&maps, &masks, cfg.max_curve_points)?;
    let pro_auc = integrate_pro_curve(&curve, DEFAULT_FPR_LIMIT)?;
    let scores: Vec<f32> = image_scores.iter().map(|r| r.2).collect();
    let labels: Vec<bool> = category.test.iter().map(|t| t.mask.is_some()).collect();
    let image_roc_auc = roc_auc(&scores, &labels)?;
    log(&format!("PRO-AUC@0.3 {pro_auc:.4}, image ROC-AUC {image_roc_auc:.4}"));

    let ScaleArtifacts {
        teacher: _,
        ensemble,
        stats,
        calibration,
    } = scale;
    Ok(BenchmarkOutcome {
        teacher,
        stats,
        ensemble,
        calibration,
        maps,
        curve,
        pro_auc,
        image_scores,
        image_roc_auc,
    })
}
