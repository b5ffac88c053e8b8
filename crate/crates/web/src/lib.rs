//! Browser demo. Two interactive pieces:
//!
//! * [`AnomalyDemo`] trains a tiny teacher and student ensemble on a
//!   procedural texture, lets the user paste foreign patches into a test
//!   image and shows the regression-error, variance and combined maps.
//! * [`ProDemo`] builds noisy score maps for random defect masks and reports
//!   the PRO curve, its normalized area and the image-level ROC AUC.

use std::f32::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use wasm_bindgen::prelude::*;

use stad::adam::AdamConfig;
use stad::dense::{densify, DenseNet};
use stad::metrics::{integrate_pro_curve, pro_curve, roc_auc, BinaryMask};
use stad::student::{
    calibrate, compute_feature_stats, train_students, InputMode, ScaleArtifacts, StudentTrainConfig,
};
use stad::synthetic::{generate_category, generate_teacher_corpus, Grating, SyntheticConfig};
use stad::teacher::{train_teacher, TeacherLossWeights, TeacherTrainConfig};
use stad::Tensor;

fn js_err(e: stad::StadError) -> JsError {
    JsError::new(&e.to_string())
}

/// Piecewise-linear dark-blue → teal → yellow → white ramp.
fn heat(t: f32) -> [u8; 3] {
    const STOPS: [[f32; 3]; 5] = [
        [0.05, 0.03, 0.20],
        [0.15, 0.35, 0.55],
        [0.20, 0.65, 0.50],
        [0.95, 0.85, 0.20],
        [1.00, 1.00, 0.95],
    ];
    let t = t.clamp(0.0, 1.0) * (STOPS.len() - 1) as f32;
    let i = (t.floor() as usize).min(STOPS.len() - 2);
    let f = t - i as f32;
    let mut out = [0u8; 3];
    for k in 0..3 {
        out[k] = ((STOPS[i][k] + f * (STOPS[i + 1][k] - STOPS[i][k])) * 255.0).round() as u8;
    }
    out
}

/// RGBA bytes of an `h×w` map scaled to `[lo, hi]`.
fn heatmap_rgba(map: &Tensor, lo: f32, hi: f32) -> Vec<u8> {
    let span = (hi - lo).max(1e-12);
    map.data()
        .iter()
        .flat_map(|&v| {
            let [r, g, b] = heat((v - lo) / span);
            [r, g, b, 255]
        })
        .collect()
}

/// RGBA bytes of a `3×h×w` image in `[0, 1]`.
fn to_rgba(img: &Tensor) -> Vec<u8> {
    let (_, h, w) = img.dims3().expect("an image");
    let d = img.data();
    (0..h * w)
        .flat_map(|i| {
            let px = |k: usize| (d[k * h * w + i].clamp(0.0, 1.0) * 255.0).round() as u8;
            [px(0), px(1), px(2), 255]
        })
        .collect()
}

fn min_max(t: &Tensor) -> (f32, f32) {
    t.data()
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

#[wasm_bindgen]
pub struct AnomalyDemo {
    side: usize,
    seed: u64,
    train: Vec<Tensor>,
    clean: Tensor,
    image: Tensor,
    mask: Vec<bool>,
    scale: Option<ScaleArtifacts>,
    maps: Option<[Tensor; 3]>,
    defects: u64,
}

#[wasm_bindgen]
impl AnomalyDemo {
    /// A texture category of `side×side` images; nothing is trained yet.
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, side: usize) -> Result<AnomalyDemo, JsError> {
        if side < 24 {
            return Err(JsError::new("the demo needs images of at least 24 pixels"));
        }
        let cfg = SyntheticConfig {
            side,
            train: 16,
            test_defective: 0,
            test_good: 1,
            defect_size: 8,
            noise_std: 0.02,
        };
        let cat = generate_category(&cfg, seed as u64).map_err(js_err)?;
        let clean = cat.test[0].image.clone();
        Ok(AnomalyDemo {
            side,
            seed: seed as u64,
            train: cat.train,
            image: clean.clone(),
            clean,
            mask: vec![false; side * side],
            scale: None,
            maps: None,
            defects: 0,
        })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn is_trained(&self) -> bool {
        self.scale.is_some()
    }

    /// Pretrains a 17×17 teacher on generic images, fits `students`
    /// students on the category and calibrates on held-out images.
    /// Returns the final teacher loss.
    pub fn train(&mut self, teacher_iterations: usize, students: usize, student_epochs: usize) -> Result<f32, JsError> {
        let mut tcfg = TeacherTrainConfig::new(17).map_err(js_err)?;
        tcfg.descriptor_dim = 16;
        tcfg.width_divisor = 16;
        tcfg.weights = TeacherLossWeights::self_supervised();
        tcfg.batch_size = 8;
        tcfg.iterations = teacher_iterations;
        tcfg.adam = AdamConfig::with_lr(1e-3, 1e-5);
        tcfg.seed = self.seed;
        let corpus = generate_teacher_corpus(40, 48, self.seed ^ 0x5eed);
        let ckpt = train_teacher(&corpus, None, &tcfg, |_, _| {}).map_err(js_err)?;
        let last = ckpt.loss_trace.last().copied().unwrap_or(f32::NAN);
        let teacher: DenseNet = densify(&ckpt.net).map_err(js_err)?;

        let (fit, held_out) = self.train.split_at(self.train.len() - 3);
        let stats = compute_feature_stats(&teacher, fit, InputMode::Dense).map_err(js_err)?;
        let scfg = StudentTrainConfig {
            students: students.max(1),
            epochs: student_epochs,
            adam: AdamConfig::with_lr(1e-3, 1e-5),
            seed: self.seed,
            mode: InputMode::Dense,
        };
        let ensemble = train_students(&teacher, &stats, fit, &scfg, |_, _| {}).map_err(js_err)?;
        let identity = stad::student::ScoreCalibration { e_mu: 0.0, e_sigma: 1.0, v_mu: 0.0, v_sigma: 1.0 };
        let raw = ScaleArtifacts::new(teacher, ensemble, stats, identity).map_err(js_err)?;
        let (mut es, mut vs) = (Vec::new(), Vec::new());
        for img in held_out {
            let (e, v) = raw.raw_scores(img, InputMode::Dense).map_err(js_err)?;
            es.push(e);
            vs.push(v);
        }
        let calibration = calibrate(&es, &vs).map_err(js_err)?;
        self.scale = Some(ScaleArtifacts { calibration, ..raw });
        self.maps = None;
        Ok(last)
    }

    /// Pastes a `size×size` patch of a foreign grating centred at `(x, y)`.
    pub fn add_defect(&mut self, x: usize, y: usize, size: usize) {
        let side = self.side;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed.wrapping_mul(31).wrapping_add(self.defects));
        self.defects += 1;
        let g = Grating {
            orientation: rng.random_range(0.0..PI),
            frequency: rng.random_range(0.2..0.35),
            phase: rng.random_range(0.0..2.0 * PI),
            low: [rng.random(), rng.random(), rng.random()],
            high: [rng.random(), rng.random(), rng.random()],
        };
        let half = size / 2;
        let (y0, x0) = (y.saturating_sub(half), x.saturating_sub(half));
        let data = self.image.data_mut();
        for yy in y0..(y0 + size).min(side) {
            for xx in x0..(x0 + size).min(side) {
                let v = g.value(yy as f32, xx as f32);
                for k in 0..3 {
                    data[(k * side + yy) * side + xx] = v[k];
                }
                self.mask[yy * side + xx] = true;
            }
        }
        self.maps = None;
    }

    /// Removes every pasted defect.
    pub fn reset(&mut self) {
        self.image = self.clean.clone();
        self.mask.fill(false);
        self.maps = None;
    }

    pub fn image_rgba(&self) -> Vec<u8> {
        to_rgba(&self.image)
    }

    /// Ground-truth mask of the pasted patches, one byte per pixel.
    pub fn mask(&self) -> Vec<u8> {
        self.mask.iter().map(|&m| m as u8).collect()
    }

    /// Computes the three maps for the current image.
    pub fn score(&mut self) -> Result<(), JsError> {
        let scale = self.scale.as_ref().ok_or_else(|| JsError::new("train the models first"))?;
        let (e, v) = scale.raw_scores(&self.image, InputMode::Dense).map_err(js_err)?;
        let combined = scale.calibration.combine(&e, &v).map_err(js_err)?;
        self.maps = Some([e, v, combined]);
        Ok(())
    }

    /// `"e"`, `"v"` or `"combined"` as RGBA; each map is scaled to its own
    /// range.
    pub fn map_rgba(&self, kind: &str) -> Result<Vec<u8>, JsError> {
        let m = self.map(kind)?;
        let (lo, hi) = min_max(m);
        Ok(heatmap_rgba(m, lo, hi))
    }

    /// Raw values of one map, row-major.
    pub fn map_values(&self, kind: &str) -> Result<Vec<f32>, JsError> {
        Ok(self.map(kind)?.data().to_vec())
    }

    /// Mean combined score inside the pasted patches minus the mean outside.
    pub fn contrast(&self) -> Result<f32, JsError> {
        let m = self.map("combined")?;
        let (mut inside, mut outside) = ((0.0f64, 0usize), (0.0f64, 0usize));
        for (&v, &d) in m.data().iter().zip(&self.mask) {
            let acc = if d { &mut inside } else { &mut outside };
            acc.0 += v as f64;
            acc.1 += 1;
        }
        if inside.1 == 0 || outside.1 == 0 {
            return Err(JsError::new("no defect pasted"));
        }
        Ok((inside.0 / inside.1 as f64 - outside.0 / outside.1 as f64) as f32)
    }
}

impl AnomalyDemo {
    fn map(&self, kind: &str) -> Result<&Tensor, JsError> {
        let maps = self.maps.as_ref().ok_or_else(|| JsError::new("score the image first"))?;
        match kind {
            "e" => Ok(&maps[0]),
            "v" => Ok(&maps[1]),
            "combined" => Ok(&maps[2]),
            _ => Err(JsError::new("map kind must be e, v or combined")),
        }
    }
}

/// Score maps `separation·mask + noise` for a handful of random defects.
#[wasm_bindgen]
pub struct ProDemo {
    curve: Vec<f64>,
    pro_auc: f64,
    roc_auc: f64,
    images: usize,
}

#[wasm_bindgen]
impl ProDemo {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, separation: f32, fpr_limit: f64) -> Result<ProDemo, JsError> {
        const SIDE: usize = 48;
        let mut rng = ChaCha8Rng::seed_from_u64(seed as u64);
        let noise = Normal::new(0.0f32, 1.0).expect("unit normal");
        let (mut maps, mut masks, mut labels) = (Vec::new(), Vec::new(), Vec::new());
        for i in 0..8 {
            let defective = i < 6;
            let mask = if defective {
                // A large and a small region compete for equal weight.
                let size = if i % 2 == 0 { 16 } else { 4 };
                let (y0, x0) = (rng.random_range(0..SIDE - size), rng.random_range(0..SIDE - size));
                BinaryMask::from_fn(SIDE, SIDE, |y, x| (y0..y0 + size).contains(&y) && (x0..x0 + size).contains(&x))
            } else {
                BinaryMask::empty(SIDE, SIDE)
            };
            let map = Tensor::from_fn(&[SIDE, SIDE], |j| separation * mask.pixels[j] as u8 as f32 + noise.sample(&mut rng));
            maps.push(map);
            masks.push(mask);
            labels.push(defective);
        }
        let points = pro_curve(&maps, &masks, 2_000).map_err(js_err)?;
        let pro_auc = integrate_pro_curve(&points, fpr_limit).map_err(js_err)?;
        let scores: Vec<f32> = maps.iter().map(|m| min_max(m).1).collect();
        let roc_auc = roc_auc(&scores, &labels).map_err(js_err)?;
        Ok(ProDemo {
            curve: points.iter().flat_map(|p| [p.fpr, p.mean_pro]).collect(),
            pro_auc,
            roc_auc,
            images: maps.len(),
        })
    }

    /// Interleaved `(fpr, pro)` pairs in order of decreasing threshold.
    pub fn curve(&self) -> Vec<f64> {
        self.curve.clone()
    }

    pub fn pro_auc(&self) -> f64 {
        self.pro_auc
    }

    /// ROC AUC of the per-image maximum score.
    pub fn roc_auc(&self) -> f64 {
        self.roc_auc
    }

    pub fn images(&self) -> usize {
        self.images
    }
}
