//! MVTec-style dataset indexing and PNG image/mask IO.
//!
//! ```text
//! <category>/train/good/*.png
//! <category>/test/<label>/*.png           (label "good" has no masks)
//! <category>/ground_truth/<label>/<stem>_mask.png
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, StadError};
use crate::imaging::{resize_image, resize_mask};
use crate::metrics::BinaryMask;
use crate::seeding::stream_rng;
use crate::synthetic::SyntheticCategory;
use crate::tensor::Tensor;

pub const GOOD_LABEL: &str = "good";
const IMAGE_EXTENSIONS: [&str; 4] = ["png", "jpg", "jpeg", "bmp"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestEntry {
    pub path: PathBuf,
    pub label: String,
    pub mask: Option<PathBuf>,
}

impl TestEntry {
    pub fn is_anomalous(&self) -> bool {
        self.label != GOOD_LABEL
    }

    /// File stem used to name per-image outputs.
    pub fn stem(&self) -> String {
        self.path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub root: PathBuf,
    pub train: Vec<PathBuf>,
    pub validation: Vec<PathBuf>,
    pub test: Vec<TestEntry>,
}

impl DatasetIndex {
    /// Validation images, or the training images when nothing was held out.
    pub fn calibration_set(&self) -> &[PathBuf] {
        if self.validation.is_empty() {
            &self.train
        } else {
            &self.validation
        }
    }
}

/// Number of images held out for validation: 10% rounded, at least one,
/// and never the whole set.
pub fn validation_count(n: usize) -> usize {
    if n < 2 {
        0
    } else {
        ((n as f64 * 0.1).round() as usize).clamp(1, n - 1)
    }
}

/// Seeded `(train, validation)` index split.
pub fn holdout_split(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut stream_rng::<ChaCha8Rng>(seed, &[300]));
    let val = idx.split_off(n - validation_count(n));
    idx.sort_unstable();
    let mut val = val;
    val.sort_unstable();
    (idx, val)
}

fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let ok = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()));
        if path.is_file() && ok {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// Image files directly inside `dir`, sorted by name.
pub fn list_corpus_images(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Err(StadError::data(format!("image directory {} does not exist", dir.display())));
    }
    let paths = list_images(dir)?;
    if paths.is_empty() {
        return Err(StadError::data(format!("no images in {}", dir.display())));
    }
    Ok(paths)
}

fn image_error(path: &Path, e: impl std::fmt::Display) -> StadError {
    StadError::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn find_mask(root: &Path, label: &str, stem: &str) -> Option<PathBuf> {
    IMAGE_EXTENSIONS
        .iter()
        .map(|ext| root.join("ground_truth").join(label).join(format!("{stem}_mask.{ext}")))
        .find(|p| p.is_file())
}

/// Indexes a category directory and holds out a seeded validation split of
/// the training images. Every defective test image needs a mask.
pub fn load_dataset(root: &Path, seed: u64) -> Result<DatasetIndex> {
    index_dataset(root, seed, true)
}

/// Like [`load_dataset`] for image-level protocols, where defective test
/// images may come without masks.
pub fn load_image_level_dataset(root: &Path, seed: u64) -> Result<DatasetIndex> {
    index_dataset(root, seed, false)
}

fn index_dataset(root: &Path, seed: u64, require_masks: bool) -> Result<DatasetIndex> {
    if !root.is_dir() {
        return Err(StadError::data(format!("dataset root {} does not exist", root.display())));
    }
    let train_dir = root.join("train").join(GOOD_LABEL);
    let all_train = if train_dir.is_dir() { list_images(&train_dir)? } else { Vec::new() };
    if all_train.is_empty() {
        return Err(StadError::data(format!("no training images under {}", train_dir.display())));
    }
    let (tr, val) = holdout_split(all_train.len(), seed);
    let train = tr.iter().map(|&i| all_train[i].clone()).collect();
    let validation = val.iter().map(|&i| all_train[i].clone()).collect();

    let mut test = Vec::new();
    let test_dir = root.join("test");
    if test_dir.is_dir() {
        let mut labels: Vec<PathBuf> = fs::read_dir(&test_dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        labels.sort();
        for dir in labels {
            let label = dir.file_name().unwrap_or_default().to_string_lossy().into_owned();
            for path in list_images(&dir)? {
                let mask = if label == GOOD_LABEL {
                    None
                } else {
                    let stem = path.file_stem().unwrap_or_default().to_string_lossy();
                    let m = match find_mask(root, &label, &stem) {
                        Some(m) => m,
                        None if require_masks => {
                            return Err(StadError::data(format!("missing ground-truth mask for {}", path.display())))
                        }
                        None => {
                            test.push(TestEntry { path, label: label.clone(), mask: None });
                            continue;
                        }
                    };
                    let di = image::image_dimensions(&path).map_err(|e| image_error(&path, e))?;
                    let dm = image::image_dimensions(&m).map_err(|e| image_error(&m, e))?;
                    if di != dm {
                        return Err(StadError::data(format!(
                            "mask {} is {}×{} but its image is {}×{}",
                            m.display(),
                            dm.0,
                            dm.1,
                            di.0,
                            di.1
                        )));
                    }
                    Some(m)
                };
                test.push(TestEntry { path, label: label.clone(), mask });
            }
        }
    }
    Ok(DatasetIndex {
        root: root.to_path_buf(),
        train,
        validation,
        test,
    })
}

/// Decodes an image as a `3×H×W` tensor in `[0, 1]`.
pub fn load_image(path: &Path) -> Result<Tensor> {
    let img = image::open(path).map_err(|e| image_error(path, e))?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = img.as_raw();
    let mut data = vec![0.0f32; 3 * h * w];
    for i in 0..h * w {
        for k in 0..3 {
            data[k * h * w + i] = raw[3 * i + k] as f32 / 255.0;
        }
    }
    Tensor::new(vec![3, h, w], data)
}

/// Loads an image and zooms it to `side×side`.
pub fn load_image_resized(path: &Path, side: usize) -> Result<Tensor> {
    resize_image(&load_image(path)?, side)
}

/// Any nonzero pixel counts as foreground.
pub fn load_mask(path: &Path) -> Result<BinaryMask> {
    let img = image::open(path).map_err(|e| image_error(path, e))?.to_luma8();
    BinaryMask::new(
        img.height() as usize,
        img.width() as usize,
        img.as_raw().iter().map(|&v| v > 0).collect(),
    )
}

pub fn load_mask_resized(path: &Path, side: usize) -> Result<BinaryMask> {
    resize_mask(&load_mask(path)?, side)
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Encodes a `3×H×W` (or `1×H×W`) tensor in `[0, 1]` as 8-bit RGB PNG.
pub fn save_image(img: &Tensor, path: &Path) -> Result<()> {
    let (c, h, w) = img.dims3()?;
    if c != 3 && c != 1 {
        return Err(StadError::shape(format!("cannot save a {c}-channel image")));
    }
    let d = img.data();
    let mut raw = Vec::with_capacity(3 * h * w);
    for i in 0..h * w {
        for k in 0..3 {
            raw.push(to_u8(d[(k % c) * h * w + i]));
        }
    }
    write_png(path, raw, w, h, image::ColorType::Rgb8)
}

pub fn save_mask(mask: &BinaryMask, path: &Path) -> Result<()> {
    let raw = mask.pixels.iter().map(|&b| if b { 255 } else { 0 }).collect();
    write_png(path, raw, mask.width, mask.height, image::ColorType::L8)
}

pub(crate) fn write_png(path: &Path, raw: Vec<u8>, w: usize, h: usize, color: image::ColorType) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let tmp = crate::formats::temp_path(path);
    image::save_buffer_with_format(&tmp, &raw, w as u32, h as u32, color, image::ImageFormat::Png)
        .map_err(|e| image_error(path, e))?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Writes a synthetic category in the layout [`load_dataset`] reads.
pub fn write_category(cat: &SyntheticCategory, root: &Path) -> Result<()> {
    for (i, img) in cat.train.iter().enumerate() {
        save_image(img, &root.join("train").join(GOOD_LABEL).join(format!("{i:03}.png")))?;
    }
    for (i, t) in cat.test.iter().enumerate() {
        save_image(&t.image, &root.join("test").join(&t.label).join(format!("{i:03}.png")))?;
        if let Some(m) = &t.mask {
            save_mask(m, &root.join("ground_truth").join(&t.label).join(format!("{i:03}_mask.png")))?;
        }
    }
    Ok(())
}
