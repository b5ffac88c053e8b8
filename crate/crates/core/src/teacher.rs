//! Teacher pretraining on patch triplets and distillation targets.
//!
//! The combined objective is `λk·Lk + λm·Lm + λc·Lc`:
//! * `Lk`: squared distance between the decoded descriptor and an external
//!   target descriptor of the same patch,
//! * `Lm`: triplet margin loss with in-triplet anchor swap,
//! * `Lc`: sum of the off-diagonal entries of the minibatch correlation
//!   matrix of descriptor dimensions.
//!
//! Each loss head returns its value and the gradient with respect to its
//! input descriptors; the gradients are then pushed through the network
//! tape.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::adam::{AdamConfig, AdamState};
use crate::arch::{Architecture, Decoder, PatchNet, DEFAULT_DESCRIPTOR_DIM};
use crate::error::{Result, StadError};
use crate::graph::{ComputeGraph, NodeId, ParamStore};
use crate::imaging::{resize_window, to_grayscale};
use crate::seeding::stream_rng;
use crate::tensor::Tensor;

/// Variance below which a descriptor dimension counts as constant.
const DEAD_VARIANCE: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub patch_size: usize,
    /// Zoomed side lengths are drawn from `[zoom_min·p, zoom_max·p]`.
    pub zoom_min: usize,
    pub zoom_max: usize,
    /// Positive crops move by at most this many pixels per axis.
    pub max_translation: usize,
    pub noise_std: f32,
    pub grayscale_prob: f64,
    /// Multiplicative luminance jitter range for positives.
    pub luminance: (f32, f32),
}

impl AugmentConfig {
    pub fn new(patch_size: usize) -> Result<Self> {
        if patch_size.is_multiple_of(2) || patch_size == 0 {
            return Err(StadError::invalid(format!("patch size {patch_size} must be odd")));
        }
        Ok(AugmentConfig {
            patch_size,
            zoom_min: 4,
            zoom_max: 16,
            max_translation: (patch_size - 1) / 4,
            noise_std: 0.1,
            grayscale_prob: 0.1,
            luminance: (0.8, 1.2),
        })
    }

    pub fn zoom_range(&self) -> std::ops::RangeInclusive<usize> {
        self.zoom_min * self.patch_size..=self.zoom_max * self.patch_size
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Triplet {
    pub anchor: Tensor,
    pub positive: Tensor,
    pub negative: Tensor,
}

/// Draws one augmented triplet: anchor and positive from the same zoomed
/// image (the positive shifted, brightened or darkened and noised), the
/// negative from a different image.
pub fn sample_triplet(corpus: &[Tensor], cfg: &AugmentConfig, rng: &mut impl Rng) -> Result<Triplet> {
    if corpus.len() < 2 {
        return Err(StadError::data("triplet sampling needs at least two corpus images"));
    }
    let p = cfg.patch_size;
    let t = cfg.max_translation;
    let ai = rng.random_range(0..corpus.len());
    let side = rng.random_range(cfg.zoom_range());
    let y = rng.random_range(t..=side - p - t);
    let x = rng.random_range(t..=side - p - t);
    let dy = rng.random_range(0..=2 * t) as isize - t as isize;
    let dx = rng.random_range(0..=2 * t) as isize - t as isize;
    let anchor = resize_window(&corpus[ai], (side, side), (y, x), (p, p))?;
    let positive = resize_window(
        &corpus[ai],
        (side, side),
        ((y as isize + dy) as usize, (x as isize + dx) as usize),
        (p, p),
    )?;

    let mut ni = rng.random_range(0..corpus.len() - 1);
    if ni >= ai {
        ni += 1;
    }
    let nside = rng.random_range(cfg.zoom_range());
    let ny = rng.random_range(0..=nside - p);
    let nx = rng.random_range(0..=nside - p);
    let negative = resize_window(&corpus[ni], (nside, nside), (ny, nx), (p, p))?;

    let gray = rng.random_bool(cfg.grayscale_prob);
    let (anchor, positive, negative) = if gray {
        (to_grayscale(&anchor)?, to_grayscale(&positive)?, to_grayscale(&negative)?)
    } else {
        (anchor, positive, negative)
    };

    let lum = rng.random_range(cfg.luminance.0..=cfg.luminance.1);
    let noise = Normal::new(0.0f32, cfg.noise_std).map_err(|e| StadError::invalid(e.to_string()))?;
    let positive = Tensor::new(
        positive.shape().to_vec(),
        positive
            .data()
            .iter()
            .map(|&v| (v * lum).clamp(0.0, 1.0) + noise.sample(rng))
            .collect(),
    )?;
    Ok(Triplet {
        anchor,
        positive,
        negative,
    })
}

/// Value of a loss head and its gradient with respect to the head's inputs.
#[derive(Clone, Debug)]
pub struct LossHead {
    pub value: f32,
    pub grads: Vec<Tensor>,
}

fn rows(t: &Tensor) -> Result<(usize, usize)> {
    match *t.shape() {
        [b, d] => Ok((b, d)),
        _ => Err(StadError::shape(format!("expected a B×d descriptor batch, got {:?}", t.shape()))),
    }
}

fn sq_dist(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Single-triplet margin loss `max(0, δ + δ⁺ − δ⁻)` with
/// `δ⁻ = min(‖a−n‖², ‖p−n‖²)`.
pub fn triplet_margin(anchor: &[f32], positive: &[f32], negative: &[f32], margin: f32) -> f32 {
    let d_pos = sq_dist(anchor, positive);
    let d_neg = sq_dist(anchor, negative).min(sq_dist(positive, negative));
    (margin + d_pos - d_neg).max(0.0)
}

/// Batch mean of the anchor-swap triplet loss over `B×d` descriptor rows.
/// Gradients are returned for anchors, positives and negatives.
pub fn metric_loss(anchors: &Tensor, positives: &Tensor, negatives: &Tensor, margin: f32) -> Result<LossHead> {
    let (b, d) = rows(anchors)?;
    if positives.shape() != anchors.shape() || negatives.shape() != anchors.shape() {
        return Err(StadError::shape("triplet members differ in shape"));
    }
    let mut ga = vec![0.0; b * d];
    let mut gp = vec![0.0; b * d];
    let mut gn = vec![0.0; b * d];
    let mut total = 0.0f64;
    let scale = 1.0 / b as f32;
    for i in 0..b {
        let r = i * d..(i + 1) * d;
        let (a, p, n) = (&anchors.data()[r.clone()], &positives.data()[r.clone()], &negatives.data()[r.clone()]);
        let d_pos = sq_dist(a, p);
        let d_an = sq_dist(a, n);
        let d_pn = sq_dist(p, n);
        let loss = margin + d_pos - d_an.min(d_pn);
        if loss <= 0.0 {
            continue;
        }
        total += loss as f64;
        let swap = d_pn < d_an;
        for k in 0..d {
            let j = i * d + k;
            ga[j] += 2.0 * (a[k] - p[k]) * scale;
            gp[j] -= 2.0 * (a[k] - p[k]) * scale;
            if swap {
                gp[j] -= 2.0 * (p[k] - n[k]) * scale;
                gn[j] += 2.0 * (p[k] - n[k]) * scale;
            } else {
                ga[j] -= 2.0 * (a[k] - n[k]) * scale;
                gn[j] += 2.0 * (a[k] - n[k]) * scale;
            }
        }
    }
    let shape = anchors.shape().to_vec();
    Ok(LossHead {
        value: (total / b as f64) as f32,
        grads: vec![
            Tensor::new(shape.clone(), ga)?,
            Tensor::new(shape.clone(), gp)?,
            Tensor::new(shape, gn)?,
        ],
    })
}

/// `Σ_{i≠j} c_ij` of the Pearson correlation matrix of the `d` descriptor
/// dimensions across a `B×d` batch. Constant dimensions have zero
/// correlation with everything.
pub fn compactness_loss(descriptors: &Tensor) -> Result<LossHead> {
    let (b, d) = rows(descriptors)?;
    if b < 2 {
        return Err(StadError::invalid("correlation needs a batch of at least two descriptors"));
    }
    let y = descriptors.data();
    let bf = b as f64;
    let mut z = vec![0.0f64; b * d];
    let mut std = vec![0.0f64; d];
    for k in 0..d {
        let mean = (0..b).map(|i| y[i * d + k] as f64).sum::<f64>() / bf;
        let mut var = 0.0;
        for i in 0..b {
            let v = y[i * d + k] as f64 - mean;
            z[i * d + k] = v;
            var += v * v;
        }
        var /= bf;
        std[k] = if var > DEAD_VARIANCE { var.sqrt() } else { 0.0 };
    }
    // standardized columns; dead ones are zero
    let u: Vec<f64> = (0..b * d)
        .map(|j| if std[j % d] > 0.0 { z[j] / std[j % d] } else { 0.0 })
        .collect();
    let row_sums: Vec<f64> = (0..b).map(|i| u[i * d..(i + 1) * d].iter().sum()).collect();
    let mut loss = 0.0;
    for i in 0..b {
        let own: f64 = u[i * d..(i + 1) * d].iter().map(|v| v * v).sum();
        loss += row_sums[i] * row_sums[i] - own;
    }
    loss /= bf;

    let mut grad = vec![0.0f32; b * d];
    for k in 0..d {
        let s = std[k];
        if s == 0.0 {
            continue;
        }
        let g: Vec<f64> = (0..b).map(|i| 2.0 / bf * (row_sums[i] - u[i * d + k])).collect();
        let gz: f64 = (0..b).map(|i| g[i] * z[i * d + k]).sum();
        let dz: Vec<f64> = (0..b)
            .map(|i| g[i] / s - z[i * d + k] * gz / (bf * s * s * s))
            .collect();
        let mean_dz = dz.iter().sum::<f64>() / bf;
        for i in 0..b {
            grad[i * d + k] = (dz[i] - mean_dz) as f32;
        }
    }
    Ok(LossHead {
        value: loss as f32,
        grads: vec![Tensor::new(vec![b, d], grad)?],
    })
}

/// Batch mean of `‖decoded − target‖²`.
pub fn knowledge_loss(decoded: &Tensor, targets: &Tensor) -> Result<LossHead> {
    let (b, _) = rows(decoded)?;
    if decoded.shape() != targets.shape() {
        return Err(StadError::shape(format!(
            "decoded {:?} vs targets {:?}",
            decoded.shape(),
            targets.shape()
        )));
    }
    let diff: Vec<f32> = decoded.data().iter().zip(targets.data()).map(|(a, t)| a - t).collect();
    let value = diff.iter().map(|v| (v * v) as f64).sum::<f64>() / b as f64;
    let grad = diff.iter().map(|v| 2.0 * v / b as f32).collect();
    Ok(LossHead {
        value: value as f32,
        grads: vec![Tensor::new(decoded.shape().to_vec(), grad)?],
    })
}

/// Triplet loss of one triplet evaluated through `net`.
pub fn loss_metric(net: &PatchNet, t: &Triplet, margin: f32) -> Result<f32> {
    let a = net.forward_patch(&t.anchor)?;
    let p = net.forward_patch(&t.positive)?;
    let n = net.forward_patch(&t.negative)?;
    Ok(triplet_margin(a.data(), p.data(), n.data(), margin))
}

/// Distillation loss of a batch of records evaluated through `net` and `dec`.
pub fn loss_knowledge(net: &PatchNet, dec: &Decoder, records: &[DistillRecord]) -> Result<f32> {
    if records.is_empty() {
        return Err(StadError::invalid("empty distillation batch"));
    }
    let patches: Vec<&Tensor> = records.iter().map(|r| &r.patch).collect();
    let targets: Vec<&Tensor> = records.iter().map(|r| &r.target).collect();
    let desc = net.forward_batch(&Tensor::stack(&patches)?)?;
    let mut decoded = Vec::new();
    for row in desc.data().chunks(net.descriptor_dim()) {
        decoded.extend_from_slice(dec.decode(&Tensor::new(vec![row.len()], row.to_vec())?)?.data());
    }
    let decoded = Tensor::new(vec![records.len(), dec.target_dim], decoded)?;
    let targets = Tensor::stack(&targets)?.reshape(&[records.len(), dec.target_dim])?;
    Ok(knowledge_loss(&decoded, &targets)?.value)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TeacherLossWeights {
    pub lambda_k: f32,
    pub lambda_m: f32,
    pub lambda_c: f32,
    pub margin: f32,
}

impl Default for TeacherLossWeights {
    /// Distillation plus compactness, no metric term.
    fn default() -> Self {
        TeacherLossWeights {
            lambda_k: 1.0,
            lambda_m: 0.0,
            lambda_c: 1.0,
            margin: 1.0,
        }
    }
}

impl TeacherLossWeights {
    pub fn self_supervised() -> Self {
        TeacherLossWeights {
            lambda_k: 0.0,
            lambda_m: 1.0,
            lambda_c: 1.0,
            margin: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let l = [self.lambda_k, self.lambda_m, self.lambda_c];
        if l.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || l.iter().all(|&v| v == 0.0) {
            return Err(StadError::invalid(format!("loss weights {l:?} must be ≥ 0 with one > 0")));
        }
        if !(self.margin > 0.0) {
            return Err(StadError::invalid("triplet margin must be positive"));
        }
        Ok(())
    }

    pub fn scaled(&self, factor: f32) -> Self {
        TeacherLossWeights {
            lambda_k: self.lambda_k * factor,
            lambda_m: self.lambda_m * factor,
            lambda_c: self.lambda_c * factor,
            margin: self.margin,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DistillRecord {
    pub patch: Tensor,
    pub target: Tensor,
}

/// Patches paired with descriptors of an external pretrained network.
#[derive(Clone, Debug, PartialEq)]
pub struct DistillTargetSet {
    pub patch_size: usize,
    pub channels: usize,
    pub target_dim: usize,
    pub records: Vec<DistillRecord>,
}

impl DistillTargetSet {
    pub fn new(patch_size: usize, channels: usize, target_dim: usize, records: Vec<DistillRecord>) -> Result<Self> {
        for (i, r) in records.iter().enumerate() {
            if r.patch.shape() != [channels, patch_size, patch_size] || r.target.shape() != [target_dim] {
                return Err(StadError::shape(format!(
                    "record {i}: patch {:?}, target {:?}",
                    r.patch.shape(),
                    r.target.shape()
                )));
            }
        }
        Ok(DistillTargetSet {
            patch_size,
            channels,
            target_dim,
            records,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TeacherTrainConfig {
    pub patch_size: usize,
    pub descriptor_dim: usize,
    pub width_divisor: usize,
    pub weights: TeacherLossWeights,
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub iterations: usize,
    pub seed: u64,
    pub augment: AugmentConfig,
}

impl TeacherTrainConfig {
    /// Defaults: `d = 128`, Adam at `2e-4` with weight decay `1e-5`, batch
    /// 64, 50 000 iterations.
    pub fn new(patch_size: usize) -> Result<Self> {
        Ok(TeacherTrainConfig {
            patch_size,
            descriptor_dim: DEFAULT_DESCRIPTOR_DIM,
            width_divisor: 1,
            weights: TeacherLossWeights::default(),
            adam: AdamConfig::with_lr(2e-4, 1e-5),
            batch_size: 64,
            iterations: 50_000,
            seed: 0,
            augment: AugmentConfig::new(patch_size)?,
        })
    }

    pub fn architecture(&self) -> Result<Architecture> {
        Architecture::scaled(self.patch_size, self.descriptor_dim, self.width_divisor)
    }
}

/// Trained teacher, its decoder (when distillation was used), the config
/// and the per-iteration combined loss.
#[derive(Clone, Debug)]
pub struct TeacherCheckpoint {
    pub net: PatchNet,
    pub decoder: Option<Decoder>,
    pub config: TeacherTrainConfig,
    pub loss_trace: Vec<f32>,
}

/// One minibatch of teacher inputs.
#[derive(Clone, Debug)]
pub struct TeacherBatch {
    pub triplets: Vec<Triplet>,
    pub distill: Vec<DistillRecord>,
}

/// Combined loss of one batch, recorded on `graph`, with the seeds needed
/// for backpropagation.
pub struct TeacherLossEval {
    pub total: f32,
    pub knowledge: f32,
    pub metric: f32,
    pub compactness: f32,
    pub seeds: Vec<(NodeId, Tensor)>,
}

/// Draws the batch for `iteration`. Every slot has its own random stream
/// derived from `(seed, iteration, slot)`.
pub fn sample_teacher_batch(
    corpus: &[Tensor],
    targets: Option<&DistillTargetSet>,
    cfg: &TeacherTrainConfig,
    iteration: u64,
) -> Result<TeacherBatch> {
    let w = cfg.weights;
    let need_patches = w.lambda_m > 0.0 || (w.lambda_c > 0.0 && w.lambda_k == 0.0);
    let mut triplets = Vec::new();
    if need_patches {
        for slot in 0..cfg.batch_size as u64 {
            let mut rng: ChaCha8Rng = stream_rng(cfg.seed, &[1, iteration, slot]);
            triplets.push(sample_triplet(corpus, &cfg.augment, &mut rng)?);
        }
    }
    let mut distill = Vec::new();
    if w.lambda_k > 0.0 {
        let set = targets.ok_or_else(|| StadError::invalid("λk > 0 requires distillation targets"))?;
        if set.records.is_empty() {
            return Err(StadError::data("distillation target set is empty"));
        }
        for slot in 0..cfg.batch_size as u64 {
            let mut rng: ChaCha8Rng = stream_rng(cfg.seed, &[2, iteration, slot]);
            distill.push(set.records[rng.random_range(0..set.records.len())].clone());
        }
    }
    Ok(TeacherBatch { triplets, distill })
}

/// Evaluates `λk·Lk + λm·Lm + λc·Lc` on `batch`. The network and decoder
/// parameters must be present in `params`.
pub fn evaluate_teacher_loss(
    graph: &mut ComputeGraph,
    net: &PatchNet,
    params: &ParamStore,
    decoder: Option<&Decoder>,
    batch: &TeacherBatch,
    weights: &TeacherLossWeights,
) -> Result<TeacherLossEval> {
    let d = net.descriptor_dim();
    let mut seeds = Vec::new();
    let mut parts: Vec<(NodeId, Tensor)> = Vec::new();

    let mut metric = 0.0;
    if !batch.triplets.is_empty() {
        let mut patches: Vec<&Tensor> = batch.triplets.iter().map(|t| &t.anchor).collect();
        if weights.lambda_m > 0.0 {
            patches.extend(batch.triplets.iter().map(|t| &t.positive));
            patches.extend(batch.triplets.iter().map(|t| &t.negative));
        }
        let x = graph.input(Tensor::stack(&patches)?)?;
        let y = net.forward_with(graph, params, x)?;
        let desc = graph.value(y)?.clone();
        if weights.lambda_m > 0.0 {
            let b = batch.triplets.len();
            let split = |k: usize| Tensor::new(vec![b, d], desc.data()[k * b * d..(k + 1) * b * d].to_vec());
            let head = metric_loss(&split(0)?, &split(1)?, &split(2)?, weights.margin)?;
            metric = head.value;
            let mut g = Vec::with_capacity(3 * b * d);
            for t in &head.grads {
                g.extend(t.data().iter().map(|v| v * weights.lambda_m));
            }
            seeds.push((y, Tensor::new(desc.shape().to_vec(), g)?));
        }
        parts.push((y, desc));
    }

    let mut knowledge = 0.0;
    if !batch.distill.is_empty() {
        let dec = decoder.ok_or_else(|| StadError::invalid("distillation batch without a decoder"))?;
        let patches: Vec<&Tensor> = batch.distill.iter().map(|r| &r.patch).collect();
        let targets: Vec<&Tensor> = batch.distill.iter().map(|r| &r.target).collect();
        let targets = Tensor::stack(&targets)?;
        let x = graph.input(Tensor::stack(&patches)?)?;
        let y = net.forward_with(graph, params, x)?;
        let z = dec.forward_with(graph, params, y)?;
        let head = knowledge_loss(graph.value(z)?, &targets)?;
        knowledge = head.value;
        seeds.push((z, head.grads[0].map(|v| v * weights.lambda_k)));
        if weights.lambda_c > 0.0 {
            parts.push((y, graph.value(y)?.clone()));
        }
    }

    let mut compactness = 0.0;
    if weights.lambda_c > 0.0 && !parts.is_empty() {
        let all: Vec<f32> = parts.iter().flat_map(|(_, t)| t.data().iter().copied()).collect();
        let rows_total = all.len() / d;
        let head = compactness_loss(&Tensor::new(vec![rows_total, d], all)?)?;
        compactness = head.value;
        let mut offset = 0;
        for (node, t) in &parts {
            let g = &head.grads[0].data()[offset..offset + t.len()];
            offset += t.len();
            seeds.push((*node, Tensor::new(t.shape().to_vec(), g.iter().map(|v| v * weights.lambda_c).collect())?));
        }
    }

    let total = weights.lambda_k * knowledge + weights.lambda_m * metric + weights.lambda_c * compactness;
    Ok(TeacherLossEval {
        total,
        knowledge,
        metric,
        compactness,
        seeds,
    })
}

/// Pretrains a teacher. `on_iteration` receives `(iteration, loss)`.
pub fn train_teacher(
    corpus: &[Tensor],
    targets: Option<&DistillTargetSet>,
    cfg: &TeacherTrainConfig,
    mut on_iteration: impl FnMut(usize, f32),
) -> Result<TeacherCheckpoint> {
    cfg.weights.validate()?;
    if corpus.is_empty() && cfg.weights.lambda_k == 0.0 {
        return Err(StadError::data("teacher corpus is empty"));
    }
    if cfg.weights.lambda_k > 0.0 && targets.is_none() {
        return Err(StadError::invalid("λk > 0 requires distillation targets"));
    }
    if cfg.batch_size == 0 {
        return Err(StadError::invalid("batch size must be positive"));
    }
    let arch = cfg.architecture()?;
    let net = PatchNet::new(arch, crate::seeding::derive_seed(cfg.seed, &[0]))?;
    let decoder = match (cfg.weights.lambda_k > 0.0, targets) {
        (true, Some(t)) => {
            if t.patch_size != cfg.patch_size {
                return Err(StadError::shape(format!(
                    "distillation patches are {0}×{0}, teacher expects {1}×{1}",
                    t.patch_size, cfg.patch_size
                )));
            }
            Some(Decoder::new(cfg.descriptor_dim, t.target_dim, crate::seeding::derive_seed(cfg.seed, &[3]))?)
        }
        _ => None,
    };
    let mut params = net.params.clone();
    if let Some(dec) = &decoder {
        params.extend(&dec.params)?;
    }
    let mut adam = AdamState::new(cfg.adam, &params);
    let mut loss_trace = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let batch = sample_teacher_batch(corpus, targets, cfg, it as u64)?;
        let mut graph = ComputeGraph::new();
        let eval = evaluate_teacher_loss(&mut graph, &net, &params, decoder.as_ref(), &batch, &cfg.weights)?;
        if !eval.total.is_finite() {
            return Err(StadError::NonFinite("teacher loss"));
        }
        graph.backward_with(eval.seeds, &mut params)?;
        adam.step(&mut params)?;
        loss_trace.push(eval.total);
        on_iteration(it, eval.total);
    }
    let (net_params, dec_params) = params.split_prefix("decoder.");
    let net = PatchNet::from_params(net.arch.clone(), net_params)?;
    let decoder = match decoder {
        Some(_) => Some(Decoder::from_tensors(
            dec_params.value(Decoder::WEIGHT)?.clone(),
            dec_params.value(Decoder::BIAS)?.clone(),
        )?),
        None => None,
    };
    Ok(TeacherCheckpoint {
        net,
        decoder,
        config: cfg.clone(),
        loss_trace,
    })
}
