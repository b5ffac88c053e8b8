//! Procedural textures for smoke tests and benchmarks: a regular texture
//! category with inserted foreign-texture defects and exact masks, and an
//! unrelated generic corpus for teacher pretraining.

use std::f32::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, StadError};
use crate::metrics::BinaryMask;
use crate::seeding::stream_rng;
use crate::tensor::Tensor;

/// A coloured sinusoidal grating blended between two colours.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grating {
    /// Radians.
    pub orientation: f32,
    /// Cycles per pixel.
    pub frequency: f32,
    pub phase: f32,
    pub low: [f32; 3],
    pub high: [f32; 3],
}

impl Grating {
    pub fn value(&self, y: f32, x: f32) -> [f32; 3] {
        let (s, c) = self.orientation.sin_cos();
        let t = 0.5 + 0.5 * (2.0 * PI * self.frequency * (x * c + y * s) + self.phase).sin();
        let mut out = [0.0; 3];
        for (k, o) in out.iter_mut().enumerate() {
            *o = self.low[k] + (self.high[k] - self.low[k]) * t;
        }
        out
    }
}

fn render(h: usize, w: usize, mut f: impl FnMut(usize, usize) -> [f32; 3]) -> Tensor {
    let mut data = vec![0.0f32; 3 * h * w];
    for y in 0..h {
        for x in 0..w {
            let v = f(y, x);
            for k in 0..3 {
                data[(k * h + y) * w + x] = v[k];
            }
        }
    }
    Tensor::new(vec![3, h, w], data).expect("rendered shape")
}

fn add_noise(img: &mut Tensor, std: f32, rng: &mut impl Rng) {
    if std <= 0.0 {
        return;
    }
    let n = Normal::new(0.0, std).expect("positive std");
    for v in img.data_mut() {
        *v = (*v + n.sample(rng)).clamp(0.0, 1.0);
    }
}

fn random_colour(rng: &mut impl Rng) -> [f32; 3] {
    [rng.random(), rng.random(), rng.random()]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub side: usize,
    pub train: usize,
    pub test_defective: usize,
    pub test_good: usize,
    pub defect_size: usize,
    pub noise_std: f32,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            side: 128,
            train: 100,
            test_defective: 20,
            test_good: 10,
            defect_size: 16,
            noise_std: 0.03,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticTestImage {
    pub image: Tensor,
    /// `"good"` or the defect label.
    pub label: String,
    pub mask: Option<BinaryMask>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticCategory {
    pub train: Vec<Tensor>,
    pub test: Vec<SyntheticTestImage>,
}

pub const DEFECT_LABEL: &str = "foreign_patch";

/// Texture family of the category: two crossed gratings with fixed
/// orientation, frequency and palette; only the phases (and a small
/// orientation jitter) vary between samples.
struct Family {
    base: Grating,
    cross: Grating,
}

impl Family {
    fn draw(rng: &mut impl Rng) -> Self {
        let orientation = rng.random_range(0.0..PI);
        let base = Grating {
            orientation,
            frequency: rng.random_range(0.08..0.14),
            phase: 0.0,
            low: random_colour(rng).map(|v| 0.15 + 0.3 * v),
            high: random_colour(rng).map(|v| 0.55 + 0.3 * v),
        };
        let cross = Grating {
            orientation: orientation + PI / 2.0,
            frequency: rng.random_range(0.03..0.06),
            phase: 0.0,
            low: [0.0; 3],
            high: [0.15; 3],
        };
        Family { base, cross }
    }

    fn sample(&self, side: usize, noise: f32, rng: &mut impl Rng) -> Tensor {
        let jitter = rng.random_range(-0.05..0.05);
        let base = Grating {
            orientation: self.base.orientation + jitter,
            phase: rng.random_range(0.0..2.0 * PI),
            ..self.base
        };
        let cross = Grating {
            orientation: self.cross.orientation + jitter,
            phase: rng.random_range(0.0..2.0 * PI),
            ..self.cross
        };
        let mut img = render(side, side, |y, x| {
            let (a, b) = (base.value(y as f32, x as f32), cross.value(y as f32, x as f32));
            [a[0] + b[0] - 0.075, a[1] + b[1] - 0.075, a[2] + b[2] - 0.075]
        });
        add_noise(&mut img, noise, rng);
        img
    }

    /// A grating that differs in orientation, frequency and palette.
    fn foreign(&self, rng: &mut impl Rng) -> Grating {
        Grating {
            orientation: self.base.orientation + rng.random_range(PI / 4.0..3.0 * PI / 4.0),
            frequency: self.base.frequency * rng.random_range(1.6..2.6),
            phase: rng.random_range(0.0..2.0 * PI),
            low: random_colour(rng),
            high: random_colour(rng),
        }
    }
}

/// Pastes a `size×size` foreign texture at a random position; returns the
/// mask.
fn insert_defect(img: &mut Tensor, g: &Grating, size: usize, noise: f32, rng: &mut impl Rng) -> Result<BinaryMask> {
    let (_, h, w) = img.dims3()?;
    if size == 0 || size > h || size > w {
        return Err(StadError::invalid(format!("defect size {size} does not fit a {h}×{w} image")));
    }
    let y0 = rng.random_range(0..=h - size);
    let x0 = rng.random_range(0..=w - size);
    let n = Normal::new(0.0, noise.max(1e-6)).expect("positive std");
    for y in y0..y0 + size {
        for x in x0..x0 + size {
            let v = g.value(y as f32, x as f32);
            for (k, &vk) in v.iter().enumerate() {
                img.data_mut()[(k * h + y) * w + x] = (vk + n.sample(rng)).clamp(0.0, 1.0);
            }
        }
    }
    Ok(BinaryMask::from_fn(h, w, |y, x| {
        (y0..y0 + size).contains(&y) && (x0..x0 + size).contains(&x)
    }))
}

/// One texture category: defect-free training images and a test split with
/// defective and good images.
pub fn generate_category(cfg: &SyntheticConfig, seed: u64) -> Result<SyntheticCategory> {
    if cfg.side == 0 || cfg.train == 0 {
        return Err(StadError::invalid("synthetic category needs a positive side and training size"));
    }
    let family = Family::draw(&mut stream_rng::<ChaCha8Rng>(seed, &[100]));
    let train = (0..cfg.train as u64)
        .map(|i| family.sample(cfg.side, cfg.noise_std, &mut stream_rng::<ChaCha8Rng>(seed, &[101, i])))
        .collect();
    let mut test = Vec::new();
    for i in 0..cfg.test_defective as u64 {
        let mut rng: ChaCha8Rng = stream_rng(seed, &[102, i]);
        let mut image = family.sample(cfg.side, cfg.noise_std, &mut rng);
        let g = family.foreign(&mut rng);
        let mask = insert_defect(&mut image, &g, cfg.defect_size, cfg.noise_std, &mut rng)?;
        test.push(SyntheticTestImage {
            image,
            label: DEFECT_LABEL.into(),
            mask: Some(mask),
        });
    }
    for i in 0..cfg.test_good as u64 {
        let mut rng: ChaCha8Rng = stream_rng(seed, &[103, i]);
        test.push(SyntheticTestImage {
            image: family.sample(cfg.side, cfg.noise_std, &mut rng),
            label: "good".into(),
            mask: None,
        });
    }
    Ok(SyntheticCategory { train, test })
}

/// Generic images for teacher pretraining: random gratings, discs,
/// rectangles and noise with arbitrary colours.
pub fn generate_teacher_corpus(count: usize, side: usize, seed: u64) -> Vec<Tensor> {
    (0..count as u64)
        .map(|i| {
            let mut rng: ChaCha8Rng = stream_rng(seed, &[200, i]);
            let mut img = render(side, side, |_, _| [0.0; 3]);
            let bg = Grating {
                orientation: rng.random_range(0.0..PI),
                frequency: rng.random_range(0.01..0.25),
                phase: rng.random_range(0.0..2.0 * PI),
                low: random_colour(&mut rng),
                high: random_colour(&mut rng),
            };
            let bg_img = render(side, side, |y, x| bg.value(y as f32, x as f32));
            img.data_mut().copy_from_slice(bg_img.data());
            let shapes = rng.random_range(2..8);
            for _ in 0..shapes {
                paint_shape(&mut img, &mut rng);
            }
            let noise = rng.random_range(0.0..0.08);
            add_noise(&mut img, noise, &mut rng);
            img
        })
        .collect()
}

fn paint_shape(img: &mut Tensor, rng: &mut impl Rng) {
    let side = img.shape()[1];
    let cy = rng.random_range(0.0..side as f32);
    let cx = rng.random_range(0.0..side as f32);
    let r = rng.random_range(side as f32 * 0.05..side as f32 * 0.3);
    let disc = rng.random_bool(0.5);
    let fill = if rng.random_bool(0.5) {
        Grating {
            orientation: rng.random_range(0.0..PI),
            frequency: rng.random_range(0.02..0.3),
            phase: rng.random_range(0.0..2.0 * PI),
            low: random_colour(rng),
            high: random_colour(rng),
        }
    } else {
        let c = random_colour(rng);
        Grating {
            orientation: 0.0,
            frequency: 0.0,
            phase: 0.0,
            low: c,
            high: c,
        }
    };
    let plane = side * side;
    for y in 0..side {
        for x in 0..side {
            let (dy, dx) = (y as f32 - cy, x as f32 - cx);
            let inside = if disc { dy * dy + dx * dx <= r * r } else { dy.abs() <= r && dx.abs() <= r * 0.6 };
            if inside {
                let v = fill.value(y as f32, x as f32);
                for (k, &vk) in v.iter().enumerate() {
                    img.data_mut()[k * plane + y * side + x] = vk;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn category_is_seeded_and_in_range() {
        let cfg = SyntheticConfig {
            side: 32,
            train: 3,
            test_defective: 2,
            test_good: 1,
            defect_size: 8,
            noise_std: 0.03,
        };
        let a = generate_category(&cfg, 5).unwrap();
        assert_eq!(a, generate_category(&cfg, 5).unwrap());
        assert_ne!(a.train[0], generate_category(&cfg, 6).unwrap().train[0]);
        assert_eq!(a.train.len(), 3);
        assert_eq!(a.test.len(), 3);
        for t in &a.test {
            assert!(t.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
            match &t.mask {
                Some(m) => assert_eq!(m.count(), 64),
                None => assert_eq!(t.label, "good"),
            }
        }
    }

    #[test]
    fn corpus_shape() {
        let c = generate_teacher_corpus(3, 40, 1);
        assert_eq!(c.len(), 3);
        assert!(c.iter().all(|t| t.shape() == [3, 40, 40]));
        assert!(c[0].data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
