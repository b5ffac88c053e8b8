//! Student ensembles: teacher normalization, regression training, and the
//! regression-error / predictive-variance anomaly scores.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adam::{AdamConfig, AdamState};
use crate::arch::PatchNet;
use crate::dense::{densify, DenseNet};
use crate::error::{Result, StadError};
use crate::graph::ComputeGraph;
use crate::imaging::resize_image;
use crate::seeding::{derive_seed, stream_rng};
use crate::tensor::Tensor;

/// Floor for every standard deviation used as a denominator.
pub const SIGMA_FLOOR: f64 = 1e-8;

fn floored_std(var: f64) -> f64 {
    var.max(0.0).sqrt().max(SIGMA_FLOOR)
}

/// How an image is presented to the networks.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputMode {
    /// Border-padded full image; one descriptor per pixel.
    #[default]
    Dense,
    /// Image zoomed to `p×p`; a single descriptor.
    Patch,
}

/// Network input for `image` under `mode`.
pub fn prepare_input(net: &DenseNet, image: &Tensor, mode: InputMode) -> Result<Tensor> {
    match mode {
        InputMode::Dense => {
            let (_, h, w) = image.dims3()?;
            let p = net.patch_size();
            if h < p || w < p {
                return Err(StadError::shape(format!("image {h}×{w} is smaller than the receptive field {p}")));
            }
            net.pad(image)
        }
        InputMode::Patch => resize_image(image, net.patch_size()),
    }
}

/// Per-dimension mean and standard deviation of teacher descriptors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mu: Vec<f32>,
    pub sigma: Vec<f32>,
}

impl FeatureStats {
    pub fn new(mu: Vec<f32>, sigma: Vec<f32>) -> Result<Self> {
        if mu.len() != sigma.len() || mu.is_empty() {
            return Err(StadError::shape(format!("stats of length {} and {}", mu.len(), sigma.len())));
        }
        if sigma.iter().any(|&s| !(s >= SIGMA_FLOOR as f32) || !s.is_finite()) || mu.iter().any(|m| !m.is_finite()) {
            return Err(StadError::NonFinite("feature statistics"));
        }
        Ok(FeatureStats { mu, sigma })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// `(y − μ)/σ` applied along the leading (channel) axis of a `d×h×w`
    /// map or a `d` vector.
    pub fn normalize(&self, map: &Tensor) -> Result<Tensor> {
        let d = self.dim();
        if map.shape().first() != Some(&d) {
            return Err(StadError::shape(format!("expected {d} channels, got {:?}", map.shape())));
        }
        let plane = map.len() / d;
        let mut out = map.clone();
        for (k, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
            let (m, s) = (self.mu[k], self.sigma[k]);
            for v in chunk {
                *v = (*v - m) / s;
            }
        }
        Ok(out)
    }
}

/// Streaming per-channel moments, merged image by image.
#[derive(Clone, Debug)]
struct Moments {
    count: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Moments {
    fn new(d: usize) -> Self {
        Moments {
            count: 0.0,
            mean: vec![0.0; d],
            m2: vec![0.0; d],
        }
    }

    /// Adds a `d×n` block of samples.
    fn add(&mut self, block: &[f32]) {
        let d = self.mean.len();
        let n = (block.len() / d) as f64;
        if n == 0.0 {
            return;
        }
        let total = self.count + n;
        for (k, chunk) in block.chunks(block.len() / d).enumerate() {
            let bm = chunk.iter().map(|&v| v as f64).sum::<f64>() / n;
            let bm2: f64 = chunk.iter().map(|&v| (v as f64 - bm).powi(2)).sum();
            let delta = bm - self.mean[k];
            self.mean[k] += delta * n / total;
            self.m2[k] += bm2 + delta * delta * self.count * n / total;
        }
        self.count = total;
    }

    fn stats(&self) -> Result<FeatureStats> {
        FeatureStats::new(
            self.mean.iter().map(|&m| m as f32).collect(),
            self.m2.iter().map(|&m2| floored_std(m2 / self.count) as f32).collect(),
        )
    }
}

/// Mean and standard deviation of the teacher's descriptors over every
/// pixel of every image (population convention, floored).
pub fn compute_feature_stats(teacher: &DenseNet, images: &[Tensor], mode: InputMode) -> Result<FeatureStats> {
    if images.is_empty() {
        return Err(StadError::data("cannot compute feature statistics of an empty dataset"));
    }
    let mut m = Moments::new(teacher.descriptor_dim());
    for img in images {
        m.add(teacher.forward_valid(&prepare_input(teacher, img, mode)?)?.data());
    }
    m.stats()
}

/// Statistics of explicit `d×h×w` descriptor maps.
pub fn feature_stats_of_maps(maps: &[Tensor]) -> Result<FeatureStats> {
    let d = *maps
        .first()
        .ok_or_else(|| StadError::data("no descriptor maps"))?
        .shape()
        .first()
        .ok_or_else(|| StadError::shape("scalar descriptor map"))?;
    let mut m = Moments::new(d);
    for map in maps {
        if map.shape().first() != Some(&d) {
            return Err(StadError::shape("descriptor maps differ in depth"));
        }
        m.add(map.data());
    }
    m.stats()
}

/// `M` students sharing the teacher's architecture.
#[derive(Clone, Debug)]
pub struct StudentEnsemble {
    students: Vec<DenseNet>,
    /// Nominal mixture covariance; it does not enter any score.
    pub covariance: f32,
    /// Mean training loss per epoch, one row per student.
    pub epoch_losses: Vec<Vec<f32>>,
}

impl StudentEnsemble {
    pub fn new(students: Vec<PatchNet>) -> Result<Self> {
        let first = students.first().ok_or_else(|| StadError::invalid("an ensemble needs at least one student"))?;
        if students.iter().any(|s| s.arch != first.arch) {
            return Err(StadError::invalid("students differ in architecture"));
        }
        Ok(StudentEnsemble {
            students: students.iter().map(densify).collect::<Result<_>>()?,
            covariance: 1.0,
            epoch_losses: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.students.len()
    }

    pub fn is_empty(&self) -> bool {
        self.students.is_empty()
    }

    pub fn patch_size(&self) -> usize {
        self.students[0].patch_size()
    }

    pub fn descriptor_dim(&self) -> usize {
        self.students[0].descriptor_dim()
    }

    pub fn students(&self) -> impl Iterator<Item = &PatchNet> {
        self.students.iter().map(|s| s.patch_net())
    }

    fn check_teacher(&self, teacher: &DenseNet) -> Result<()> {
        if teacher.patch_net().arch != self.students[0].patch_net().arch {
            return Err(StadError::invalid(format!(
                "teacher (p={}, d={}) and students (p={}, d={}) differ in architecture",
                teacher.patch_size(),
                teacher.descriptor_dim(),
                self.patch_size(),
                self.descriptor_dim()
            )));
        }
        Ok(())
    }

    /// Every student's descriptor map for a prepared input.
    pub fn predict(&self, input: &Tensor) -> Result<Vec<Tensor>> {
        self.students.iter().map(|s| s.forward_valid(input)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudentTrainConfig {
    pub students: usize,
    pub epochs: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    pub mode: InputMode,
}

impl Default for StudentTrainConfig {
    fn default() -> Self {
        StudentTrainConfig {
            students: 3,
            epochs: 100,
            adam: AdamConfig::with_lr(1e-4, 1e-5),
            seed: 0,
            mode: InputMode::Dense,
        }
    }
}

/// Mean over pixels of `‖prediction − target‖²` for `d×h×w` maps, and its
/// gradient with respect to the prediction.
pub fn regression_loss(prediction: &Tensor, target: &Tensor) -> Result<(f32, Tensor)> {
    if prediction.shape() != target.shape() || prediction.ndim() < 1 {
        return Err(StadError::shape(format!(
            "prediction {:?} vs target {:?}",
            prediction.shape(),
            target.shape()
        )));
    }
    let pixels = (prediction.len() / prediction.shape()[0]) as f32;
    let diff: Vec<f32> = prediction.data().iter().zip(target.data()).map(|(p, t)| p - t).collect();
    let value = diff.iter().map(|v| (v * v) as f64).sum::<f64>() / pixels as f64;
    let grad = diff.iter().map(|v| 2.0 * v / pixels).collect();
    Ok((value as f32, Tensor::new(prediction.shape().to_vec(), grad)?))
}

/// Trains `cfg.students` students against the normalized teacher on
/// anomaly-free images, one image per step. All students visit the images
/// in the same per-epoch order, so each teacher target is computed once per
/// step. `on_epoch` receives the epoch index and each student's mean loss.
pub fn train_students(
    teacher: &DenseNet,
    stats: &FeatureStats,
    images: &[Tensor],
    cfg: &StudentTrainConfig,
    mut on_epoch: impl FnMut(usize, &[f32]),
) -> Result<StudentEnsemble> {
    if cfg.students == 0 {
        return Err(StadError::invalid("ensemble size must be at least 1"));
    }
    if images.is_empty() {
        return Err(StadError::data("no training images"));
    }
    if stats.dim() != teacher.descriptor_dim() {
        return Err(StadError::shape("feature statistics do not match the teacher"));
    }
    let arch = teacher.patch_net().arch.clone();
    let nets: Vec<PatchNet> = (0..cfg.students as u64)
        .map(|i| PatchNet::new(arch.clone(), derive_seed(cfg.seed, &[10, i])))
        .collect::<Result<_>>()?;
    let dense: Vec<DenseNet> = nets.iter().map(densify).collect::<Result<_>>()?;
    let mut params: Vec<_> = nets.into_iter().map(|n| n.params).collect();
    let mut optimizers: Vec<_> = params.iter().map(|p| AdamState::new(cfg.adam, p)).collect();

    let mut order: Vec<usize> = (0..images.len()).collect();
    let mut history = vec![Vec::with_capacity(cfg.epochs); cfg.students];
    for epoch in 0..cfg.epochs {
        let mut rng: ChaCha8Rng = stream_rng(cfg.seed, &[11, epoch as u64]);
        order.shuffle(&mut rng);
        let mut sums = vec![0.0f64; cfg.students];
        for &i in &order {
            let input = prepare_input(teacher, &images[i], cfg.mode)?;
            let target = stats.normalize(&teacher.forward_valid(&input)?)?;
            let (c, h, w) = input.dims3()?;
            for (s, net) in dense.iter().enumerate() {
                let mut g = ComputeGraph::new();
                let x = g.input(input.clone().reshape(&[1, c, h, w])?)?;
                let y = net.forward_with(&mut g, &params[s], x)?;
                let pred = g.value(y)?;
                let (loss, grad) = regression_loss(&pred.clone().reshape(target.shape())?, &target)?;
                if !loss.is_finite() {
                    return Err(StadError::NonFinite("student loss"));
                }
                sums[s] += loss as f64;
                let seed = grad.reshape(pred.shape())?;
                g.backward_with(vec![(y, seed)], &mut params[s])?;
                optimizers[s].step(&mut params[s])?;
            }
        }
        let means: Vec<f32> = sums.iter().map(|v| (v / images.len() as f64) as f32).collect();
        for (h, &m) in history.iter_mut().zip(&means) {
            h.push(m);
        }
        on_epoch(epoch, &means);
    }
    let students = params
        .into_iter()
        .map(|p| PatchNet::from_params(arch.clone(), p))
        .collect::<Result<Vec<_>>>()?;
    let mut ensemble = StudentEnsemble::new(students)?;
    ensemble.epoch_losses = history;
    Ok(ensemble)
}

/// A single-channel `h×w` score map.
#[derive(Clone, Debug, PartialEq)]
pub struct AnomalyMap {
    pub scores: Tensor,
    /// Receptive fields that contributed, in order.
    pub scales: Vec<usize>,
}

impl AnomalyMap {
    pub fn height(&self) -> usize {
        self.scores.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.scores.shape()[1]
    }

    pub fn max(&self) -> f32 {
        self.scores.data().iter().copied().fold(f32::NEG_INFINITY, f32::max)
    }
}

fn map_dims(t: &Tensor) -> Result<(usize, usize)> {
    match *t.shape() {
        [_, h, w] => Ok((h, w)),
        _ => Err(StadError::shape(format!("expected a d×h×w map, got {:?}", t.shape()))),
    }
}

/// `‖mean_i(pred_i) − target‖²` per pixel.
pub fn regression_error_from(predictions: &[Tensor], target: &Tensor) -> Result<Tensor> {
    let (h, w) = map_dims(target)?;
    if predictions.is_empty() || predictions.iter().any(|p| p.shape() != target.shape()) {
        return Err(StadError::shape("predictions do not match the target map"));
    }
    let m = predictions.len() as f64;
    let plane = h * w;
    let d = target.shape()[0];
    let mut out = vec![0.0f64; plane];
    for k in 0..d {
        for (px, o) in out.iter_mut().enumerate() {
            let j = k * plane + px;
            let mean = predictions.iter().map(|p| p.data()[j] as f64).sum::<f64>() / m;
            let diff = mean - target.data()[j] as f64;
            *o += diff * diff;
        }
    }
    Tensor::new(vec![h, w], out.into_iter().map(|v| v as f32).collect())
}

/// `mean_i ‖pred_i‖² − ‖mean_i pred_i‖²` per pixel.
pub fn variance_from(predictions: &[Tensor]) -> Result<Tensor> {
    let first = predictions.first().ok_or_else(|| StadError::invalid("no predictions"))?;
    let (h, w) = map_dims(first)?;
    if predictions.iter().any(|p| p.shape() != first.shape()) {
        return Err(StadError::shape("predictions differ in shape"));
    }
    let m = predictions.len() as f64;
    let plane = h * w;
    let d = first.shape()[0];
    let mut second = vec![0.0f64; plane];
    let mut first_sq = vec![0.0f64; plane];
    for k in 0..d {
        for px in 0..plane {
            let j = k * plane + px;
            let mut sum = 0.0;
            let mut sq = 0.0;
            for p in predictions {
                let v = p.data()[j] as f64;
                sum += v;
                sq += v * v;
            }
            let mean = sum / m;
            second[px] += sq / m;
            first_sq[px] += mean * mean;
        }
    }
    Tensor::new(
        vec![h, w],
        second.iter().zip(&first_sq).map(|(a, b)| (a - b) as f32).collect(),
    )
}

/// Raw regression-error and variance maps of one image.
pub fn raw_scores(
    ensemble: &StudentEnsemble,
    teacher: &DenseNet,
    stats: &FeatureStats,
    image: &Tensor,
    mode: InputMode,
) -> Result<(Tensor, Tensor)> {
    ensemble.check_teacher(teacher)?;
    let input = prepare_input(teacher, image, mode)?;
    let target = stats.normalize(&teacher.forward_valid(&input)?)?;
    let preds = ensemble.predict(&input)?;
    Ok((regression_error_from(&preds, &target)?, variance_from(&preds)?))
}

pub fn regression_error_map(
    ensemble: &StudentEnsemble,
    teacher: &DenseNet,
    stats: &FeatureStats,
    image: &Tensor,
) -> Result<AnomalyMap> {
    ensemble.check_teacher(teacher)?;
    let input = prepare_input(teacher, image, InputMode::Dense)?;
    let target = stats.normalize(&teacher.forward_valid(&input)?)?;
    Ok(AnomalyMap {
        scores: regression_error_from(&ensemble.predict(&input)?, &target)?,
        scales: vec![teacher.patch_size()],
    })
}

pub fn variance_map(ensemble: &StudentEnsemble, image: &Tensor) -> Result<AnomalyMap> {
    let input = prepare_input(&ensemble.students[0], image, InputMode::Dense)?;
    Ok(AnomalyMap {
        scores: variance_from(&ensemble.predict(&input)?)?,
        scales: vec![ensemble.patch_size()],
    })
}

/// Validation statistics that standardize both raw scores.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreCalibration {
    pub e_mu: f64,
    pub e_sigma: f64,
    pub v_mu: f64,
    pub v_sigma: f64,
}

fn mean_std(maps: &[Tensor]) -> Result<(f64, f64)> {
    let n: usize = maps.iter().map(Tensor::len).sum();
    if n == 0 {
        return Err(StadError::data("calibration needs at least one validation map"));
    }
    let mean = maps.iter().map(|m| m.sum()).sum::<f64>() / n as f64;
    let var = maps
        .iter()
        .flat_map(|m| m.data().iter())
        .map(|&v| (v as f64 - mean).powi(2))
        .sum::<f64>()
        / n as f64;
    Ok((mean, floored_std(var)))
}

/// Mean and standard deviation of the `e` and `v` maps over all pixels of
/// all validation images.
pub fn calibrate(e_maps: &[Tensor], v_maps: &[Tensor]) -> Result<ScoreCalibration> {
    let (e_mu, e_sigma) = mean_std(e_maps)?;
    let (v_mu, v_sigma) = mean_std(v_maps)?;
    Ok(ScoreCalibration {
        e_mu,
        e_sigma,
        v_mu,
        v_sigma,
    })
}

impl ScoreCalibration {
    pub fn normalize_e(&self, e: f64) -> f64 {
        (e - self.e_mu) / self.e_sigma
    }

    pub fn normalize_v(&self, v: f64) -> f64 {
        (v - self.v_mu) / self.v_sigma
    }

    /// `(e − e_μ)/e_σ + (v − v_μ)/v_σ`, pixelwise.
    pub fn combine(&self, e: &Tensor, v: &Tensor) -> Result<Tensor> {
        if e.shape() != v.shape() {
            return Err(StadError::shape("e and v maps differ in shape"));
        }
        Tensor::new(
            e.shape().to_vec(),
            e.data()
                .iter()
                .zip(v.data())
                .map(|(&a, &b)| (self.normalize_e(a as f64) + self.normalize_v(b as f64)) as f32)
                .collect(),
        )
    }
}

/// Everything needed to score images at one receptive field.
#[derive(Clone, Debug)]
pub struct ScaleArtifacts {
    pub teacher: DenseNet,
    pub ensemble: StudentEnsemble,
    pub stats: FeatureStats,
    pub calibration: ScoreCalibration,
}

impl ScaleArtifacts {
    pub fn new(
        teacher: DenseNet,
        ensemble: StudentEnsemble,
        stats: FeatureStats,
        calibration: ScoreCalibration,
    ) -> Result<Self> {
        ensemble.check_teacher(&teacher)?;
        if stats.dim() != teacher.descriptor_dim() {
            return Err(StadError::shape("feature statistics do not match the teacher"));
        }
        Ok(ScaleArtifacts {
            teacher,
            ensemble,
            stats,
            calibration,
        })
    }

    pub fn patch_size(&self) -> usize {
        self.teacher.patch_size()
    }

    pub fn raw_scores(&self, image: &Tensor, mode: InputMode) -> Result<(Tensor, Tensor)> {
        raw_scores(&self.ensemble, &self.teacher, &self.stats, image, mode)
    }

    /// Calibrated single-scale map.
    pub fn score_map(&self, image: &Tensor) -> Result<Tensor> {
        let (e, v) = self.raw_scores(image, InputMode::Dense)?;
        self.calibration.combine(&e, &v)
    }
}

/// Pixelwise mean of equally shaped maps.
pub fn fuse_maps(maps: &[Tensor]) -> Result<Tensor> {
    let first = maps.first().ok_or_else(|| StadError::invalid("no maps to fuse"))?;
    if maps.iter().any(|m| m.shape() != first.shape()) {
        return Err(StadError::shape("scale maps differ in shape"));
    }
    let l = maps.len() as f64;
    Tensor::new(
        first.shape().to_vec(),
        (0..first.len())
            .map(|i| (maps.iter().map(|m| m.data()[i] as f64).sum::<f64>() / l) as f32)
            .collect(),
    )
}

/// Calibrated anomaly map averaged over all scales.
pub fn anomaly_map(image: &Tensor, scales: &[ScaleArtifacts]) -> Result<AnomalyMap> {
    if scales.is_empty() {
        return Err(StadError::invalid("no scales to score with"));
    }
    let maps = scales.iter().map(|s| s.score_map(image)).collect::<Result<Vec<_>>>()?;
    Ok(AnomalyMap {
        scores: fuse_maps(&maps)?,
        scales: scales.iter().map(ScaleArtifacts::patch_size).collect(),
    })
}

/// Calibrated score of the single descriptor of `image` zoomed to `p×p`,
/// averaged over scales.
pub fn image_level_score(scales: &[ScaleArtifacts], image: &Tensor) -> Result<f32> {
    if scales.is_empty() {
        return Err(StadError::invalid("no scales to score with"));
    }
    let mut total = 0.0;
    for s in scales {
        let (e, v) = s.raw_scores(image, InputMode::Patch)?;
        total += s.calibration.normalize_e(e.data()[0] as f64) + s.calibration.normalize_v(v.data()[0] as f64);
    }
    Ok((total / scales.len() as f64) as f32)
}
