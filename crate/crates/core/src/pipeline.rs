//! File-driven pipeline stages. Each stage reads only the run configuration
//! and artifacts written by earlier stages.
//!
//! ```text
//! <run_dir>/config.json
//! <run_dir>/teacher_p{p}.ckpt
//! <run_dir>/students_p{p}.ckpt  stats_p{p}.bin  calibration_p{p}.bin
//! <run_dir>/maps/<label>/<stem>.amap  (+ .png overlay)
//! <run_dir>/image_scores.tsv  pro_curve.tsv  metrics.json
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::dataset::{
    list_corpus_images, load_dataset, load_image, load_image_level_dataset, load_image_resized, load_mask_resized,
    write_png, DatasetIndex, TestEntry,
};
use crate::dense::densify;
use crate::error::{Result, StadError};
use crate::formats::{
    load_anomaly_map, load_calibration, load_distill_targets, load_stats, load_students, load_teacher,
    save_anomaly_map, save_calibration, save_stats, save_students, save_teacher, write_atomic,
};
use crate::metrics::{image_scores_tsv, integrate_pro_curve, pro_curve, pro_curve_tsv, roc_auc, BinaryMask};
use crate::student::{
    anomaly_map, calibrate, compute_feature_stats, image_level_score, train_students, InputMode, ScaleArtifacts,
    ScoreCalibration, StudentEnsemble,
};
use crate::teacher::train_teacher;
use crate::tensor::Tensor;

/// Environment variable naming the run directory when no flag is given.
pub const RUN_DIR_ENV: &str = "STAD_RUN_DIR";

pub fn teacher_path(run_dir: &Path, p: usize) -> PathBuf {
    run_dir.join(format!("teacher_p{p}.ckpt"))
}

pub fn students_path(run_dir: &Path, p: usize) -> PathBuf {
    run_dir.join(format!("students_p{p}.ckpt"))
}

pub fn stats_path(run_dir: &Path, p: usize) -> PathBuf {
    run_dir.join(format!("stats_p{p}.bin"))
}

pub fn calibration_path(run_dir: &Path, p: usize) -> PathBuf {
    run_dir.join(format!("calibration_p{p}.bin"))
}

pub fn map_path(run_dir: &Path, entry: &TestEntry) -> PathBuf {
    run_dir.join("maps").join(&entry.label).join(format!("{}.amap", entry.stem()))
}

fn echo_config(cfg: &RunConfig) -> Result<()> {
    write_atomic(&cfg.run_dir.join("config.json"), cfg.to_json().as_bytes())
}

fn index(cfg: &RunConfig) -> Result<DatasetIndex> {
    match cfg.input_mode {
        InputMode::Dense => load_dataset(&cfg.dataset, cfg.seed),
        InputMode::Patch => load_image_level_dataset(&cfg.dataset, cfg.seed),
    }
}

fn load_images(cfg: &RunConfig, paths: &[PathBuf]) -> Result<Vec<Tensor>> {
    paths
        .iter()
        .map(|p| match cfg.input_mode {
            InputMode::Dense => load_image_resized(p, cfg.image_side),
            InputMode::Patch => load_image(p),
        })
        .collect()
}

fn mismatch(what: &str, p: usize) -> StadError {
    StadError::Config(format!("{what} for p={p} does not match the configured architecture"))
}

/// Pretrains one teacher per configured scale.
pub fn train_teacher_stage(cfg: &RunConfig, mut log: impl FnMut(&str)) -> Result<()> {
    cfg.validate()?;
    echo_config(cfg)?;
    let w = cfg.loss_weights();
    let needs_corpus = w.lambda_m > 0.0 || (w.lambda_c > 0.0 && w.lambda_k == 0.0);
    let corpus = match (&cfg.teacher_corpus, needs_corpus) {
        (Some(dir), true) => {
            let paths = list_corpus_images(dir)?;
            log(&format!("loading {} corpus images", paths.len()));
            paths.iter().map(|p| load_image(p)).collect::<Result<Vec<_>>>()?
        }
        (None, true) => return Err(StadError::Config("teacher_corpus is required when lambda_m > 0".into())),
        (_, false) => Vec::new(),
    };
    for &p in &cfg.scales {
        let tcfg = cfg.teacher_config(p)?;
        let targets = match cfg.distill_path(p) {
            Some(path) if w.lambda_k > 0.0 => Some(load_distill_targets(&path)?),
            _ => None,
        };
        let every = (tcfg.iterations / 20).max(1);
        let ck = train_teacher(&corpus, targets.as_ref(), &tcfg, |it, loss| {
            if (it + 1) % every == 0 {
                log(&format!("p={p} iteration {}/{} loss {loss:.5}", it + 1, tcfg.iterations));
            }
        })?;
        let path = teacher_path(&cfg.run_dir, p);
        save_teacher(&ck, &path)?;
        log(&format!("wrote {}", path.display()));
    }
    Ok(())
}

fn raw_calibration(
    scale: &ScaleArtifacts,
    images: &[Tensor],
    mode: InputMode,
) -> Result<ScoreCalibration> {
    let mut e_maps = Vec::with_capacity(images.len());
    let mut v_maps = Vec::with_capacity(images.len());
    for img in images {
        let (e, v) = scale.raw_scores(img, mode)?;
        e_maps.push(e);
        v_maps.push(v);
    }
    calibrate(&e_maps, &v_maps)
}

fn placeholder_calibration() -> ScoreCalibration {
    ScoreCalibration {
        e_mu: 0.0,
        e_sigma: 1.0,
        v_mu: 0.0,
        v_sigma: 1.0,
    }
}

/// Trains a student ensemble per scale against its saved teacher, then
/// computes feature statistics and score calibration.
pub fn train_students_stage(cfg: &RunConfig, mut log: impl FnMut(&str)) -> Result<()> {
    cfg.validate()?;
    echo_config(cfg)?;
    let idx = index(cfg)?;
    let train = load_images(cfg, &idx.train)?;
    let calib = load_images(cfg, idx.calibration_set())?;
    log(&format!("{} training and {} calibration images", train.len(), calib.len()));
    for &p in &cfg.scales {
        let teacher = load_teacher(&teacher_path(&cfg.run_dir, p))?;
        if teacher.net.arch != cfg.architecture(p)? {
            return Err(mismatch("teacher checkpoint", p));
        }
        let dense = densify(&teacher.net)?;
        let stats = compute_feature_stats(&dense, &train, cfg.input_mode)?;
        let scfg = cfg.student_config(p);
        let ensemble = train_students(&dense, &stats, &train, &scfg, |epoch, losses| {
            log(&format!("p={p} epoch {}/{} losses {losses:?}", epoch + 1, scfg.epochs));
        })?;
        save_students(&ensemble, Some(&scfg), &students_path(&cfg.run_dir, p))?;
        save_stats(&stats, &stats_path(&cfg.run_dir, p))?;
        let scale = ScaleArtifacts::new(dense, ensemble, stats, placeholder_calibration())?;
        let calibration = raw_calibration(&scale, &calib, cfg.input_mode)?;
        save_calibration(&calibration, &calibration_path(&cfg.run_dir, p))?;
        log(&format!("p={p}: {calibration:?}"));
    }
    Ok(())
}

fn load_scale(cfg: &RunConfig, p: usize, with_calibration: bool) -> Result<ScaleArtifacts> {
    let teacher = load_teacher(&teacher_path(&cfg.run_dir, p))?;
    let arch = cfg.architecture(p)?;
    if teacher.net.arch != arch {
        return Err(mismatch("teacher checkpoint", p));
    }
    let (ensemble, _): (StudentEnsemble, _) = load_students(&students_path(&cfg.run_dir, p))?;
    if ensemble.students().next().map(|s| &s.arch) != Some(&arch) {
        return Err(mismatch("student checkpoint", p));
    }
    let stats = load_stats(&stats_path(&cfg.run_dir, p))?;
    let calibration = if with_calibration {
        load_calibration(&calibration_path(&cfg.run_dir, p))?
    } else {
        placeholder_calibration()
    };
    ScaleArtifacts::new(densify(&teacher.net)?, ensemble, stats, calibration)
}

/// Recomputes the score calibration of every scale on the validation set.
pub fn calibrate_stage(cfg: &RunConfig, mut log: impl FnMut(&str)) -> Result<()> {
    cfg.validate()?;
    echo_config(cfg)?;
    let idx = index(cfg)?;
    let calib = load_images(cfg, idx.calibration_set())?;
    for &p in &cfg.scales {
        let scale = load_scale(cfg, p, false)?;
        let c = raw_calibration(&scale, &calib, cfg.input_mode)?;
        save_calibration(&c, &calibration_path(&cfg.run_dir, p))?;
        log(&format!("p={p}: {c:?}"));
    }
    Ok(())
}

fn heat(t: f32) -> [f32; 3] {
    let ch = |c: f32| (1.5 - (4.0 * t - c).abs()).clamp(0.0, 1.0);
    [ch(3.0), ch(2.0), ch(1.0)]
}

/// Half-and-half blend of the image with a min–max scaled heat map.
pub fn overlay(image: &Tensor, scores: &Tensor) -> Result<Vec<u8>> {
    let (_, h, w) = image.dims3()?;
    if scores.shape() != [h, w] {
        return Err(StadError::shape("overlay map does not match the image"));
    }
    let (lo, hi) = scores
        .data()
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let range = if hi > lo { hi - lo } else { 1.0 };
    let d = image.data();
    let mut raw = Vec::with_capacity(3 * h * w);
    for i in 0..h * w {
        let c = heat((scores.data()[i] - lo) / range);
        for k in 0..3 {
            raw.push(((0.5 * d[k * h * w + i] + 0.5 * c[k]).clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    Ok(raw)
}

/// Writes one fused anomaly map and overlay per test image (dense mode),
/// or the image-level score table (patch mode).
pub fn score_stage(cfg: &RunConfig, mut log: impl FnMut(&str)) -> Result<()> {
    cfg.validate()?;
    echo_config(cfg)?;
    let idx = index(cfg)?;
    let scales = cfg
        .scales
        .iter()
        .map(|&p| load_scale(cfg, p, true))
        .collect::<Result<Vec<_>>>()?;
    if cfg.input_mode == InputMode::Patch {
        let mut rows = Vec::new();
        for e in &idx.test {
            let score = image_level_score(&scales, &load_image(&e.path)?)?;
            rows.push((format!("{}/{}", e.label, e.stem()), e.label.clone(), score));
        }
        write_atomic(&cfg.run_dir.join("image_scores.tsv"), image_scores_tsv(&rows).as_bytes())?;
        log(&format!("scored {} images", rows.len()));
        return Ok(());
    }
    // Images are independent; each worker takes every `workers`-th image.
    let n = idx.test.len();
    let workers = std::thread::available_parallelism().map_or(1, |w| w.get()).clamp(1, n.max(1));
    let score_one = |e: &TestEntry| -> Result<String> {
        let img = load_image_resized(&e.path, cfg.image_side)?;
        let map = anomaly_map(&img, &scales)?;
        let path = map_path(&cfg.run_dir, e);
        save_anomaly_map(&map.scores, &path)?;
        write_png(
            &path.with_extension("png"),
            overlay(&img, &map.scores)?,
            cfg.image_side,
            cfg.image_side,
            image::ColorType::Rgb8,
        )?;
        Ok(format!("{} max {:.3}", path.display(), map.max()))
    };
    let mut results: Vec<Option<Result<String>>> = (0..n).map(|_| None).collect();
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let score_one = &score_one;
                let test = &idx.test;
                s.spawn(move || (w..n).step_by(workers).map(|i| (i, score_one(&test[i]))).collect::<Vec<_>>())
            })
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("scoring worker panicked") {
                results[i] = Some(r);
            }
        }
    });
    for (i, r) in results.into_iter().enumerate() {
        let msg = r.expect("every image scored")?;
        log(&format!("[{}/{n}] {msg}", i + 1));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationSummary {
    pub scales: Vec<usize>,
    pub test_images: usize,
    pub defect_regions: usize,
    pub fpr_limit: f64,
    pub pro_auc: Option<f64>,
    pub image_roc_auc: Option<f64>,
}

fn parse_scores(text: &str) -> Result<Vec<(String, String, f32)>> {
    text.lines()
        .skip(1)
        .filter(|l| !l.is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split('\t').collect();
            match f.as_slice() {
                [name, label, score] => Ok((
                    name.to_string(),
                    label.to_string(),
                    score.parse().map_err(|_| StadError::format(format!("bad score line {l:?}")))?,
                )),
                _ => Err(StadError::format(format!("bad score line {l:?}"))),
            }
        })
        .collect()
}

/// PRO curve, PRO-AUC and image-level ROC-AUC from the scored maps.
pub fn evaluate_stage(cfg: &RunConfig, mut log: impl FnMut(&str)) -> Result<EvaluationSummary> {
    cfg.validate()?;
    echo_config(cfg)?;
    let idx = index(cfg)?;
    let mut summary = EvaluationSummary {
        scales: cfg.scales.clone(),
        test_images: idx.test.len(),
        defect_regions: 0,
        fpr_limit: cfg.fpr_limit,
        pro_auc: None,
        image_roc_auc: None,
    };
    let rows = if cfg.input_mode == InputMode::Patch {
        let path = cfg.run_dir.join("image_scores.tsv");
        let text = fs::read_to_string(&path)
            .map_err(|_| StadError::data(format!("missing artifact {}", path.display())))?;
        parse_scores(&text)?
    } else {
        let mut maps = Vec::new();
        let mut masks = Vec::new();
        let mut rows = Vec::new();
        for e in &idx.test {
            let map = load_anomaly_map(&map_path(&cfg.run_dir, e))?;
            if map.shape() != [cfg.image_side, cfg.image_side] {
                return Err(StadError::Config(format!(
                    "map for {} is {:?}, config expects side {}",
                    e.path.display(),
                    map.shape(),
                    cfg.image_side
                )));
            }
            masks.push(match &e.mask {
                Some(m) => load_mask_resized(m, cfg.image_side)?,
                None => BinaryMask::empty(cfg.image_side, cfg.image_side),
            });
            let max = map.data().iter().copied().fold(f32::NEG_INFINITY, f32::max);
            rows.push((format!("{}/{}", e.label, e.stem()), e.label.clone(), max));
            maps.push(map);
        }
        summary.defect_regions = masks.iter().map(|m| crate::metrics::connected_components(m).len()).sum();
        if summary.defect_regions > 0 {
            let curve = pro_curve(&maps, &masks, cfg.max_curve_points)?;
            write_atomic(&cfg.run_dir.join("pro_curve.tsv"), pro_curve_tsv(&curve).as_bytes())?;
            summary.pro_auc = Some(integrate_pro_curve(&curve, cfg.fpr_limit)?);
        } else {
            log("no ground-truth regions; skipping the PRO curve");
        }
        write_atomic(&cfg.run_dir.join("image_scores.tsv"), image_scores_tsv(&rows).as_bytes())?;
        rows
    };
    let labels: Vec<bool> = rows.iter().map(|r| r.1 != crate::dataset::GOOD_LABEL).collect();
    if labels.iter().any(|&l| l) && labels.iter().any(|&l| !l) {
        let scores: Vec<f32> = rows.iter().map(|r| r.2).collect();
        summary.image_roc_auc = Some(roc_auc(&scores, &labels)?);
    } else {
        log("test set has a single class; skipping ROC-AUC");
    }
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    write_atomic(&cfg.run_dir.join("metrics.json"), json.as_bytes())?;
    log(&json);
    Ok(summary)
}
