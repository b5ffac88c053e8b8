//! Versioned little-endian artifact files.
//!
//! Every file starts with an 8-byte magic and a `u32` version. Writes go to
//! a temporary sibling first and are renamed into place.
//!
//! | file        | magic      | payload                                               |
//! |-------------|------------|-------------------------------------------------------|
//! | checkpoint  | `STADCKPT` | JSON metadata, then named tensors                     |
//! | stats       | `STADSTAT` | `d`, `μ[d]`, `σ[d]`                                   |
//! | calibration | `STADCALB` | `e_μ, e_σ, v_μ, v_σ` as `f64`                         |
//! | anomaly map | `STADAMAP` | `h`, `w`, `h·w` scores row-major                      |
//! | distill     | `STADDIST` | count, `p`, channels, target dim, then records        |
//! | tensor      | `STADTENS` | rank, dims, data                                      |

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::arch::{Architecture, Decoder, PatchNet};
use crate::error::{Result, StadError};
use crate::graph::ParamStore;
use crate::student::{FeatureStats, ScoreCalibration, StudentEnsemble, StudentTrainConfig};
use crate::teacher::{DistillRecord, DistillTargetSet, TeacherCheckpoint, TeacherTrainConfig};
use crate::tensor::Tensor;

pub const FORMAT_VERSION: u32 = 1;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"STADCKPT";
pub const STATS_MAGIC: &[u8; 8] = b"STADSTAT";
pub const CALIBRATION_MAGIC: &[u8; 8] = b"STADCALB";
pub const ANOMALY_MAP_MAGIC: &[u8; 8] = b"STADAMAP";
pub const DISTILL_MAGIC: &[u8; 8] = b"STADDIST";
pub const TENSOR_MAGIC: &[u8; 8] = b"STADTENS";

/// Magic plus version.
pub const HEADER_LEN: usize = 12;

pub(crate) fn temp_path(path: &Path) -> PathBuf {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!(".{name}.tmp{}", std::process::id()))
}

/// Writes `bytes` to `path` via a temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let tmp = temp_path(path);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

struct Writer(Vec<u8>);

impl Writer {
    fn new(magic: &[u8; 8]) -> Self {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(magic);
        w.u32(FORMAT_VERSION);
        w
    }

    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn len(&mut self, v: usize) -> Result<()> {
        let v = u32::try_from(v).map_err(|_| StadError::format(format!("length {v} exceeds u32")))?;
        self.u32(v);
        Ok(())
    }

    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn f32s(&mut self, v: &[f32]) {
        self.0.reserve(4 * v.len());
        for x in v {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }

    fn bytes(&mut self, b: &[u8]) -> Result<()> {
        self.len(b.len())?;
        self.0.extend_from_slice(b);
        Ok(())
    }

    fn tensor(&mut self, t: &Tensor) -> Result<()> {
        self.len(t.ndim())?;
        for &d in t.shape() {
            self.len(d)?;
        }
        self.f32s(t.data());
        Ok(())
    }
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(data: &'a [u8], magic: &[u8; 8]) -> Result<Self> {
        if data.len() < HEADER_LEN {
            return Err(StadError::format("file shorter than its header"));
        }
        if &data[..8] != magic {
            return Err(StadError::format(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(&data[..8]),
                String::from_utf8_lossy(magic)
            )));
        }
        let mut r = Reader { data, pos: 8 };
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(StadError::Version {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        Ok(r)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.data.len()).ok_or_else(|| {
            StadError::format(format!("truncated payload: need {n} bytes at offset {}", self.pos))
        })?;
        let s = &self.data[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn len(&mut self) -> Result<usize> {
        Ok(self.u32()? as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| StadError::format("length overflow"))?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }

    fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.len()?;
        self.take(n)
    }

    fn tensor(&mut self) -> Result<Tensor> {
        let rank = self.len()?;
        if rank > 8 {
            return Err(StadError::format(format!("implausible tensor rank {rank}")));
        }
        let shape = (0..rank).map(|_| self.len()).collect::<Result<Vec<_>>>()?;
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| StadError::format("tensor size overflow"))?;
        Tensor::new(shape, self.f32s(n)?)
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.data.len() {
            return Err(StadError::format(format!(
                "{} trailing bytes after payload",
                self.data.len() - self.pos
            )));
        }
        Ok(())
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            StadError::data(format!("missing artifact {}", path.display()))
        } else {
            e.into()
        }
    })
}

/// JSON metadata plus named parameter tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointFile {
    pub metadata: String,
    pub tensors: Vec<(String, Tensor)>,
}

impl CheckpointFile {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Writer::new(CHECKPOINT_MAGIC);
        w.bytes(self.metadata.as_bytes())?;
        w.len(self.tensors.len())?;
        for (name, t) in &self.tensors {
            w.bytes(name.as_bytes())?;
            w.tensor(t)?;
        }
        Ok(w.0)
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self> {
        let mut r = Reader::new(data, CHECKPOINT_MAGIC)?;
        let metadata = String::from_utf8(r.bytes()?.to_vec()).map_err(|e| StadError::format(e.to_string()))?;
        let n = r.len()?;
        let mut tensors = Vec::new();
        for _ in 0..n {
            let name = String::from_utf8(r.bytes()?.to_vec()).map_err(|e| StadError::format(e.to_string()))?;
            tensors.push((name, r.tensor()?));
        }
        r.finish()?;
        Ok(CheckpointFile { metadata, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?)
    }

    fn take(&mut self, name: &str) -> Result<Tensor> {
        let i = self
            .tensors
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| StadError::format(format!("checkpoint lacks tensor {name}")))?;
        Ok(self.tensors.remove(i).1)
    }

    /// Moves every tensor named `<prefix>...` into a store, prefix removed.
    fn take_params(&mut self, prefix: &str) -> Result<ParamStore> {
        let mut store = ParamStore::new();
        let mut rest = Vec::new();
        for (name, t) in self.tensors.drain(..) {
            match name.strip_prefix(prefix) {
                Some(short) => store.insert(short, t)?,
                None => rest.push((name, t)),
            }
        }
        self.tensors = rest;
        Ok(store)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum CheckpointMeta {
    Teacher {
        architecture: Architecture,
        config: TeacherTrainConfig,
        iterations: usize,
        has_decoder: bool,
    },
    Students {
        architecture: Architecture,
        config: Option<StudentTrainConfig>,
        students: usize,
        covariance: f32,
    },
}

fn meta_json(meta: &CheckpointMeta) -> Result<String> {
    serde_json::to_string_pretty(meta).map_err(|e| StadError::format(e.to_string()))
}

fn parse_meta(file: &CheckpointFile) -> Result<CheckpointMeta> {
    serde_json::from_str(&file.metadata).map_err(|e| StadError::format(format!("checkpoint metadata: {e}")))
}

pub fn teacher_to_file(ck: &TeacherCheckpoint) -> Result<CheckpointFile> {
    let meta = CheckpointMeta::Teacher {
        architecture: ck.net.arch.clone(),
        config: ck.config.clone(),
        iterations: ck.loss_trace.len(),
        has_decoder: ck.decoder.is_some(),
    };
    let mut tensors: Vec<(String, Tensor)> = ck
        .net
        .params
        .iter()
        .map(|p| (format!("teacher.{}", p.name), p.value.clone()))
        .collect();
    if let Some(dec) = &ck.decoder {
        tensors.extend(dec.params.iter().map(|p| (p.name.clone(), p.value.clone())));
    }
    tensors.push(("meta.loss_trace".into(), Tensor::new(vec![ck.loss_trace.len()], ck.loss_trace.clone())?));
    Ok(CheckpointFile {
        metadata: meta_json(&meta)?,
        tensors,
    })
}

pub fn teacher_from_file(mut file: CheckpointFile) -> Result<TeacherCheckpoint> {
    let CheckpointMeta::Teacher {
        architecture,
        config,
        has_decoder,
        ..
    } = parse_meta(&file)?
    else {
        return Err(StadError::format("not a teacher checkpoint"));
    };
    let loss_trace = file.take("meta.loss_trace")?.into_data();
    let decoder = if has_decoder {
        Some(Decoder::from_tensors(file.take(Decoder::WEIGHT)?, file.take(Decoder::BIAS)?)?)
    } else {
        None
    };
    let params = file.take_params("teacher.")?;
    if let Some((name, _)) = file.tensors.first() {
        return Err(StadError::format(format!("unexpected tensor {name} in teacher checkpoint")));
    }
    Ok(TeacherCheckpoint {
        net: PatchNet::from_params(architecture, params)?,
        decoder,
        config,
        loss_trace,
    })
}

pub fn save_teacher(ck: &TeacherCheckpoint, path: &Path) -> Result<()> {
    teacher_to_file(ck)?.save(path)
}

pub fn load_teacher(path: &Path) -> Result<TeacherCheckpoint> {
    teacher_from_file(CheckpointFile::load(path)?)
}

pub fn students_to_file(ens: &StudentEnsemble, config: Option<&StudentTrainConfig>) -> Result<CheckpointFile> {
    let arch = ens.students().next().expect("non-empty ensemble").arch.clone();
    let meta = CheckpointMeta::Students {
        architecture: arch,
        config: config.cloned(),
        students: ens.len(),
        covariance: ens.covariance,
    };
    let mut tensors = Vec::new();
    for (i, s) in ens.students().enumerate() {
        tensors.extend(s.params.iter().map(|p| (format!("student{i}.{}", p.name), p.value.clone())));
    }
    for (i, losses) in ens.epoch_losses.iter().enumerate() {
        tensors.push((format!("meta.epoch_losses{i}"), Tensor::new(vec![losses.len()], losses.clone())?));
    }
    Ok(CheckpointFile {
        metadata: meta_json(&meta)?,
        tensors,
    })
}

pub fn students_from_file(mut file: CheckpointFile) -> Result<(StudentEnsemble, Option<StudentTrainConfig>)> {
    let CheckpointMeta::Students {
        architecture,
        config,
        students,
        covariance,
    } = parse_meta(&file)?
    else {
        return Err(StadError::format("not a student checkpoint"));
    };
    let mut nets = Vec::with_capacity(students);
    for i in 0..students {
        nets.push(PatchNet::from_params(architecture.clone(), file.take_params(&format!("student{i}."))?)?);
    }
    let mut epoch_losses = Vec::new();
    for i in 0..students {
        match file.take(&format!("meta.epoch_losses{i}")) {
            Ok(t) => epoch_losses.push(t.into_data()),
            Err(_) => break,
        }
    }
    if let Some((name, _)) = file.tensors.first() {
        return Err(StadError::format(format!("unexpected tensor {name} in student checkpoint")));
    }
    let mut ens = StudentEnsemble::new(nets)?;
    ens.covariance = covariance;
    ens.epoch_losses = epoch_losses;
    Ok((ens, config))
}

pub fn save_students(ens: &StudentEnsemble, config: Option<&StudentTrainConfig>, path: &Path) -> Result<()> {
    students_to_file(ens, config)?.save(path)
}

pub fn load_students(path: &Path) -> Result<(StudentEnsemble, Option<StudentTrainConfig>)> {
    students_from_file(CheckpointFile::load(path)?)
}

pub fn stats_to_bytes(s: &FeatureStats) -> Result<Vec<u8>> {
    let mut w = Writer::new(STATS_MAGIC);
    w.len(s.dim())?;
    w.f32s(&s.mu);
    w.f32s(&s.sigma);
    Ok(w.0)
}

pub fn stats_from_bytes(data: &[u8]) -> Result<FeatureStats> {
    let mut r = Reader::new(data, STATS_MAGIC)?;
    let d = r.len()?;
    let mu = r.f32s(d)?;
    let sigma = r.f32s(d)?;
    r.finish()?;
    FeatureStats::new(mu, sigma)
}

/// Size in bytes of a stats file for dimension `d`.
pub fn stats_file_len(d: usize) -> usize {
    HEADER_LEN + 4 + 8 * d
}

pub fn save_stats(s: &FeatureStats, path: &Path) -> Result<()> {
    write_atomic(path, &stats_to_bytes(s)?)
}

pub fn load_stats(path: &Path) -> Result<FeatureStats> {
    stats_from_bytes(&read_file(path)?)
}

pub fn calibration_to_bytes(c: &ScoreCalibration) -> Vec<u8> {
    let mut w = Writer::new(CALIBRATION_MAGIC);
    for v in [c.e_mu, c.e_sigma, c.v_mu, c.v_sigma] {
        w.f64(v);
    }
    w.0
}

pub fn calibration_from_bytes(data: &[u8]) -> Result<ScoreCalibration> {
    let mut r = Reader::new(data, CALIBRATION_MAGIC)?;
    let c = ScoreCalibration {
        e_mu: r.f64()?,
        e_sigma: r.f64()?,
        v_mu: r.f64()?,
        v_sigma: r.f64()?,
    };
    r.finish()?;
    if !(c.e_sigma > 0.0 && c.v_sigma > 0.0) || [c.e_mu, c.v_mu].iter().any(|v| !v.is_finite()) {
        return Err(StadError::format("calibration values out of range"));
    }
    Ok(c)
}

pub fn save_calibration(c: &ScoreCalibration, path: &Path) -> Result<()> {
    write_atomic(path, &calibration_to_bytes(c))
}

pub fn load_calibration(path: &Path) -> Result<ScoreCalibration> {
    calibration_from_bytes(&read_file(path)?)
}

/// Encodes an `h×w` score map.
pub fn anomaly_map_to_bytes(scores: &Tensor) -> Result<Vec<u8>> {
    let (h, w) = match *scores.shape() {
        [h, w] => (h, w),
        _ => return Err(StadError::shape(format!("anomaly map must be h×w, got {:?}", scores.shape()))),
    };
    let mut wr = Writer::new(ANOMALY_MAP_MAGIC);
    wr.len(h)?;
    wr.len(w)?;
    wr.f32s(scores.data());
    Ok(wr.0)
}

pub fn anomaly_map_from_bytes(data: &[u8]) -> Result<Tensor> {
    let mut r = Reader::new(data, ANOMALY_MAP_MAGIC)?;
    let h = r.len()?;
    let w = r.len()?;
    let n = h.checked_mul(w).ok_or_else(|| StadError::format("map size overflow"))?;
    let t = Tensor::new(vec![h, w], r.f32s(n)?)?;
    r.finish()?;
    Ok(t)
}

pub fn save_anomaly_map(scores: &Tensor, path: &Path) -> Result<()> {
    write_atomic(path, &anomaly_map_to_bytes(scores)?)
}

pub fn load_anomaly_map(path: &Path) -> Result<Tensor> {
    anomaly_map_from_bytes(&read_file(path)?)
}

/// Records hold each patch channel-major (`3×p×p`) followed by its target.
pub fn distill_to_bytes(set: &DistillTargetSet) -> Result<Vec<u8>> {
    let mut w = Writer::new(DISTILL_MAGIC);
    w.len(set.records.len())?;
    w.len(set.patch_size)?;
    w.len(set.channels)?;
    w.len(set.target_dim)?;
    for r in &set.records {
        w.f32s(r.patch.data());
        w.f32s(r.target.data());
    }
    Ok(w.0)
}

pub fn distill_from_bytes(data: &[u8]) -> Result<DistillTargetSet> {
    let mut r = Reader::new(data, DISTILL_MAGIC)?;
    let count = r.len()?;
    let p = r.len()?;
    let c = r.len()?;
    let t = r.len()?;
    let mut records = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let patch = Tensor::new(vec![c, p, p], r.f32s(c * p * p)?)?;
        let target = Tensor::new(vec![t], r.f32s(t)?)?;
        records.push(DistillRecord { patch, target });
    }
    r.finish()?;
    DistillTargetSet::new(p, c, t, records)
}

pub fn save_distill_targets(set: &DistillTargetSet, path: &Path) -> Result<()> {
    write_atomic(path, &distill_to_bytes(set)?)
}

pub fn load_distill_targets(path: &Path) -> Result<DistillTargetSet> {
    distill_from_bytes(&read_file(path)?)
}

pub fn tensor_to_bytes(t: &Tensor) -> Result<Vec<u8>> {
    let mut w = Writer::new(TENSOR_MAGIC);
    w.tensor(t)?;
    Ok(w.0)
}

pub fn tensor_from_bytes(data: &[u8]) -> Result<Tensor> {
    let mut r = Reader::new(data, TENSOR_MAGIC)?;
    let t = r.tensor()?;
    r.finish()?;
    Ok(t)
}

/// Size in bytes of a tensor file with the given shape.
pub fn tensor_file_len(shape: &[usize]) -> usize {
    HEADER_LEN + 4 + 4 * shape.len() + 4 * shape.iter().product::<usize>()
}
