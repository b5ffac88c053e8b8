//! Per-region-overlap (PRO) curves and ROC-AUC.
//!
//! PRO weights every ground-truth connected component equally: at a given
//! threshold it is the mean, over all components of the dataset, of the
//! fraction of the component's pixels predicted anomalous. The false-positive
//! rate is pooled over every negative pixel of every image.

use std::cmp::Ordering;
use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Result, StadError};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, pixels: Vec<bool>) -> Result<Self> {
        if pixels.len() != height * width {
            return Err(StadError::shape(format!(
                "mask {height}×{width} with {} pixels",
                pixels.len()
            )));
        }
        Ok(BinaryMask { height, width, pixels })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        BinaryMask {
            height,
            width,
            pixels: vec![false; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let pixels = (0..height * width).map(|i| f(i / width, i % width)).collect();
        BinaryMask { height, width, pixels }
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.pixels[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.pixels.iter().filter(|&&p| p).count()
    }
}

/// One 8-connected ground-truth component, as flat pixel indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Region {
    pub pixels: Vec<usize>,
}

/// 8-connected components of the true pixels, in raster order of their
/// first pixel.
pub fn connected_components(mask: &BinaryMask) -> Vec<Region> {
    let (h, w) = (mask.height, mask.width);
    let mut seen = vec![false; h * w];
    let mut regions = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..h * w {
        if !mask.pixels[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let mut pixels = Vec::new();
        while let Some(i) = queue.pop_front() {
            pixels.push(i);
            let (y, x) = ((i / w) as isize, (i % w) as isize);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (ny, nx) = (y + dy, x + dx);
                    if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if mask.pixels[j] && !seen[j] {
                        seen[j] = true;
                        queue.push_back(j);
                    }
                }
            }
        }
        pixels.sort_unstable();
        regions.push(Region { pixels });
    }
    regions
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProCurvePoint {
    pub threshold: f32,
    pub fpr: f64,
    pub mean_pro: f64,
}

fn map_dims(map: &Tensor) -> Result<(usize, usize)> {
    match *map.shape() {
        [h, w] | [1, h, w] => Ok((h, w)),
        _ => Err(StadError::shape(format!("score map must be h×w, got {:?}", map.shape()))),
    }
}

fn check_pairs(maps: &[Tensor], masks: &[BinaryMask]) -> Result<()> {
    if maps.len() != masks.len() {
        return Err(StadError::shape(format!("{} score maps for {} masks", maps.len(), masks.len())));
    }
    if maps.is_empty() {
        return Err(StadError::invalid("no score maps"));
    }
    for (m, g) in maps.iter().zip(masks) {
        if map_dims(m)? != (g.height, g.width) {
            return Err(StadError::shape(format!(
                "score map {:?} paired with {}×{} mask",
                m.shape(),
                g.height,
                g.width
            )));
        }
    }
    Ok(())
}

/// Mean PRO and pooled FPR of the prediction `score ≥ threshold`.
pub fn pro_at_threshold(maps: &[Tensor], masks: &[BinaryMask], threshold: f32) -> Result<(f64, f64)> {
    check_pairs(maps, masks)?;
    let mut overlap_sum = 0.0f64;
    let mut n_regions = 0usize;
    let (mut false_pos, mut negatives) = (0u64, 0u64);
    for (map, mask) in maps.iter().zip(masks) {
        let scores = map.data();
        for region in connected_components(mask) {
            let hit = region.pixels.iter().filter(|&&i| scores[i] >= threshold).count();
            overlap_sum += hit as f64 / region.pixels.len() as f64;
            n_regions += 1;
        }
        for (s, &gt) in scores.iter().zip(&mask.pixels) {
            if !gt {
                negatives += 1;
                if *s >= threshold {
                    false_pos += 1;
                }
            }
        }
    }
    if n_regions == 0 {
        return Err(StadError::data("no ground-truth region in the dataset"));
    }
    if negatives == 0 {
        return Err(StadError::data("no negative pixels in the dataset"));
    }
    Ok((overlap_sum / n_regions as f64, false_pos as f64 / negatives as f64))
}

/// PRO curve swept from the highest score downwards. A point is emitted at
/// every distinct score value; when there are more than `max_points`
/// distinct values, at evenly spaced positions of the distinct-value
/// sequence. The curve starts at `(fpr, pro) = (0, 0)` with threshold `+∞`.
pub fn pro_curve(maps: &[Tensor], masks: &[BinaryMask], max_points: usize) -> Result<Vec<ProCurvePoint>> {
    check_pairs(maps, masks)?;
    // (score, per-pixel PRO contribution; None for negative pixels)
    let mut entries: Vec<(f32, Option<f64>)> = Vec::new();
    let mut n_regions = 0usize;
    let mut weights_per_map = Vec::with_capacity(maps.len());
    for mask in masks {
        let regions = connected_components(mask);
        n_regions += regions.len();
        weights_per_map.push(regions);
    }
    if n_regions == 0 {
        return Err(StadError::data("no ground-truth region in the dataset"));
    }
    let mut negatives = 0u64;
    for ((map, mask), regions) in maps.iter().zip(masks).zip(&weights_per_map) {
        let scores = map.data();
        let mut weight = vec![0.0f64; scores.len()];
        for r in regions {
            let w = 1.0 / (r.pixels.len() as f64 * n_regions as f64);
            for &i in &r.pixels {
                weight[i] = w;
            }
        }
        for (i, (&s, &gt)) in scores.iter().zip(&mask.pixels).enumerate() {
            if gt {
                entries.push((s, Some(weight[i])));
            } else {
                negatives += 1;
                entries.push((s, None));
            }
        }
    }
    if negatives == 0 {
        return Err(StadError::data("no negative pixels in the dataset"));
    }
    entries.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut group_ends = Vec::new();
    for i in 0..entries.len() {
        if i + 1 == entries.len() || entries[i + 1].0.total_cmp(&entries[i].0) != Ordering::Equal {
            group_ends.push(i);
        }
    }
    let keep_every = if max_points == 0 { 1 } else { group_ends.len().div_ceil(max_points).max(1) };

    let mut curve = vec![ProCurvePoint {
        threshold: f32::INFINITY,
        fpr: 0.0,
        mean_pro: 0.0,
    }];
    let (mut fp, mut pro) = (0u64, 0.0f64);
    let mut g = 0usize;
    for (i, &(_, w)) in entries.iter().enumerate() {
        match w {
            Some(w) => pro += w,
            None => fp += 1,
        }
        if group_ends.get(g) == Some(&i) {
            if (g + 1).is_multiple_of(keep_every) || g + 1 == group_ends.len() {
                curve.push(ProCurvePoint {
                    threshold: entries[i].0,
                    fpr: fp as f64 / negatives as f64,
                    mean_pro: pro.min(1.0),
                });
            }
            g += 1;
        }
    }
    Ok(curve)
}

/// Trapezoidal area under `mean_pro(fpr)` on `[0, fpr_limit]`, divided by
/// `fpr_limit`. The last segment is interpolated linearly to end exactly at
/// the limit.
pub fn integrate_pro_curve(curve: &[ProCurvePoint], fpr_limit: f64) -> Result<f64> {
    if !(fpr_limit > 0.0 && fpr_limit <= 1.0) {
        return Err(StadError::invalid(format!("FPR limit {fpr_limit} must lie in (0, 1]")));
    }
    let mut area = 0.0;
    for pair in curve.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        if a.fpr >= fpr_limit {
            break;
        }
        if b.fpr <= fpr_limit {
            area += (b.fpr - a.fpr) * (a.mean_pro + b.mean_pro) / 2.0;
        } else {
            let t = (fpr_limit - a.fpr) / (b.fpr - a.fpr);
            let pro_at_limit = a.mean_pro + t * (b.mean_pro - a.mean_pro);
            area += (fpr_limit - a.fpr) * (a.mean_pro + pro_at_limit) / 2.0;
            break;
        }
    }
    Ok((area / fpr_limit).clamp(0.0, 1.0))
}

pub const DEFAULT_FPR_LIMIT: f64 = 0.3;
pub const DEFAULT_MAX_CURVE_POINTS: usize = 1_000_000;

/// Normalized area under the PRO curve up to `fpr_limit`.
pub fn pro_auc(maps: &[Tensor], masks: &[BinaryMask], fpr_limit: f64) -> Result<f64> {
    if !(fpr_limit > 0.0 && fpr_limit <= 1.0) {
        return Err(StadError::invalid(format!("FPR limit {fpr_limit} must lie in (0, 1]")));
    }
    integrate_pro_curve(&pro_curve(maps, masks, DEFAULT_MAX_CURVE_POINTS)?, fpr_limit)
}

/// Area under the ROC curve as the Mann–Whitney statistic, ties counting
/// one half. `labels[i]` is true for anomalous samples.
pub fn roc_auc(scores: &[f32], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(StadError::shape(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    let positives = labels.iter().filter(|&&l| l).count() as u64;
    let negatives = labels.len() as u64 - positives;
    if positives == 0 || negatives == 0 {
        return Err(StadError::data("ROC-AUC needs both normal and anomalous samples"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // twice the number of (anomalous, normal) pairs ranked correctly, ties
    // counting one
    let mut doubled_wins = 0u64;
    let mut negatives_below = 0u64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]].total_cmp(&scores[order[i]]) == Ordering::Equal {
            j += 1;
        }
        let group = &order[i..j];
        let group_neg = group.iter().filter(|&&k| !labels[k]).count() as u64;
        let group_pos = group.len() as u64 - group_neg;
        doubled_wins += group_pos * (2 * negatives_below + group_neg);
        negatives_below += group_neg;
        i = j;
    }
    Ok(doubled_wins as f64 / (2 * positives * negatives) as f64)
}

/// `threshold\tfpr\tmean_pro` table, one curve point per line.
pub fn pro_curve_tsv(curve: &[ProCurvePoint]) -> String {
    let mut out = String::from("threshold\tfpr\tmean_pro\n");
    for p in curve {
        out.push_str(&format!("{:e}\t{:e}\t{:e}\n", p.threshold, p.fpr, p.mean_pro));
    }
    out
}

/// `name\tlabel\tscore` table.
pub fn image_scores_tsv(rows: &[(String, String, f32)]) -> String {
    let mut out = String::from("image\tlabel\tscore\n");
    for (name, label, score) in rows {
        out.push_str(&format!("{name}\t{label}\t{score:e}\n"));
    }
    out
}
