use std::path::Path;

use proptest::prelude::*;
use stad::arch::{Architecture, Decoder, PatchNet};
use stad::formats::*;
use stad::student::{FeatureStats, ScoreCalibration, StudentEnsemble, StudentTrainConfig};
use stad::teacher::{DistillRecord, DistillTargetSet, TeacherCheckpoint, TeacherTrainConfig};
use stad::{StadError, Tensor};

fn arch() -> Architecture {
    Architecture::scaled(17, 8, 16).unwrap()
}

fn teacher(with_decoder: bool) -> TeacherCheckpoint {
    let mut config = TeacherTrainConfig::new(17).unwrap();
    config.width_divisor = 16;
    config.descriptor_dim = 8;
    TeacherCheckpoint {
        net: PatchNet::new(arch(), 3).unwrap(),
        decoder: with_decoder.then(|| Decoder::new(8, 12, 4).unwrap()),
        config,
        loss_trace: vec![3.0, 2.5, 2.25],
    }
}

fn ensemble() -> StudentEnsemble {
    let mut e = StudentEnsemble::new((0..3).map(|i| PatchNet::new(arch(), 10 + i).unwrap()).collect()).unwrap();
    e.epoch_losses = vec![vec![1.0, 0.5], vec![1.1, 0.6], vec![0.9, 0.4]];
    e
}

/// save → load → save must reproduce the file byte for byte.
fn round_trip<T>(dir: &Path, name: &str, save: impl Fn(&T, &Path) -> stad::Result<()>, load: impl Fn(&Path) -> stad::Result<T>, value: &T) {
    let (a, b) = (dir.join(format!("{name}.a")), dir.join(format!("{name}.b")));
    save(value, &a).unwrap();
    let loaded = load(&a).unwrap();
    save(&loaded, &b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap(), "{name}");
}

#[test]
fn every_format_round_trips_byte_identically() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for with_decoder in [false, true] {
        round_trip(d, "teacher", save_teacher, load_teacher, &teacher(with_decoder));
    }
    let cfg = StudentTrainConfig::default();
    round_trip(d, "students", |e, p| save_students(e, Some(&cfg), p), |p| load_students(p).map(|x| x.0), &ensemble());
    round_trip(d, "students-nocfg", |e, p| save_students(e, None, p), |p| load_students(p).map(|x| x.0), &ensemble());
    let stats = FeatureStats::new(vec![0.5, -1.0, 2.0], vec![1.0, 0.25, 3.0]).unwrap();
    round_trip(d, "stats", save_stats, load_stats, &stats);
    let cal = ScoreCalibration { e_mu: 0.1, e_sigma: 2.0, v_mu: 1e-3, v_sigma: 0.5 };
    round_trip(d, "calibration", save_calibration, load_calibration, &cal);
    let map = Tensor::from_fn(&[5, 7], |i| i as f32 * 0.5 - 3.0);
    round_trip(d, "map", save_anomaly_map, load_anomaly_map, &map);
    let records = (0..3)
        .map(|i| DistillRecord {
            patch: Tensor::from_fn(&[3, 17, 17], |j| ((i * 31 + j) % 17) as f32 / 17.0),
            target: Tensor::from_fn(&[6], |j| j as f32 - i as f32),
        })
        .collect();
    let set = DistillTargetSet::new(17, 3, 6, records).unwrap();
    round_trip(d, "distill", save_distill_targets, load_distill_targets, &set);
}

#[test]
fn loaded_artifacts_equal_the_saved_ones() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.ckpt");
    let t = teacher(true);
    save_teacher(&t, &path).unwrap();
    let back = load_teacher(&path).unwrap();
    assert_eq!(back.net.arch, t.net.arch);
    for p in t.net.params.iter() {
        assert_eq!(back.net.params.value(&p.name).unwrap(), &p.value);
    }
    assert_eq!(back.loss_trace, t.loss_trace);
    assert_eq!(back.config, t.config);
    let dec = back.decoder.unwrap();
    assert_eq!(dec.params.value(Decoder::WEIGHT).unwrap(), t.decoder.as_ref().unwrap().params.value(Decoder::WEIGHT).unwrap());

    let path = dir.path().join("s.ckpt");
    let cfg = StudentTrainConfig { students: 3, epochs: 2, ..Default::default() };
    save_students(&ensemble(), Some(&cfg), &path).unwrap();
    let (ens, got_cfg) = load_students(&path).unwrap();
    assert_eq!(got_cfg, Some(cfg));
    assert_eq!(ens.len(), 3);
    assert_eq!(ens.epoch_losses, ensemble().epoch_losses);
    for (a, b) in ens.students().zip(ensemble().students()) {
        for p in b.params.iter() {
            assert_eq!(a.params.value(&p.name).unwrap(), &p.value);
        }
    }
}

#[test]
fn headers_are_checked() {
    let map = Tensor::from_fn(&[2, 3], |i| i as f32);
    let bytes = anomaly_map_to_bytes(&map).unwrap();
    assert_eq!(&bytes[..8], ANOMALY_MAP_MAGIC);
    assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), FORMAT_VERSION);

    let mut wrong_version = bytes.clone();
    wrong_version[8..12].copy_from_slice(&(FORMAT_VERSION + 1).to_le_bytes());
    assert!(matches!(anomaly_map_from_bytes(&wrong_version), Err(StadError::Version { .. })));

    let mut wrong_magic = bytes.clone();
    wrong_magic[0] = b'X';
    assert!(matches!(anomaly_map_from_bytes(&wrong_magic), Err(StadError::Format(_))));
    assert!(stats_from_bytes(&bytes).is_err(), "a map is not a stats file");

    assert!(anomaly_map_from_bytes(&bytes[..bytes.len() - 1]).is_err());
    let mut trailing = bytes.clone();
    trailing.push(0);
    assert!(anomaly_map_from_bytes(&trailing).is_err());
}

#[test]
fn missing_files_are_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.bin");
    assert!(matches!(load_stats(&missing), Err(StadError::Data(_))));
    assert!(matches!(load_teacher(&missing), Err(StadError::Data(_))));
}

#[test]
fn fixed_size_layouts() {
    let stats = FeatureStats::new(vec![0.0; 5], vec![1.0; 5]).unwrap();
    assert_eq!(stats_to_bytes(&stats).unwrap().len(), stats_file_len(5));
    let t = Tensor::zeros(&[2, 3, 4]);
    assert_eq!(tensor_to_bytes(&t).unwrap().len(), tensor_file_len(&[2, 3, 4]));
    let cal = ScoreCalibration { e_mu: 0.0, e_sigma: 1.0, v_mu: 0.0, v_sigma: 1.0 };
    assert_eq!(calibration_to_bytes(&cal).len(), HEADER_LEN + 32);
}

#[test]
fn writes_leave_no_temporary_files() {
    let dir = tempfile::tempdir().unwrap();
    save_anomaly_map(&Tensor::zeros(&[2, 2]), &dir.path().join("m.amap")).unwrap();
    let names: Vec<_> = std::fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(names, vec![std::ffi::OsString::from("m.amap")]);
}

proptest! {
    #[test]
    fn tensors_round_trip(dims in prop::collection::vec(1usize..5, 0..4), seed in any::<u32>()) {
        let len: usize = dims.iter().product();
        let t = Tensor::new(dims.clone(), (0..len).map(|i| (i as f32 + seed as f32).sin() * 1e3).collect()).unwrap();
        let bytes = tensor_to_bytes(&t).unwrap();
        let back = tensor_from_bytes(&bytes).unwrap();
        prop_assert_eq!(&back, &t);
        prop_assert_eq!(tensor_to_bytes(&back).unwrap(), bytes);
    }

    #[test]
    fn anomaly_maps_round_trip(h in 1usize..20, w in 1usize..20, scale in -1e6f32..1e6) {
        let map = Tensor::from_fn(&[h, w], |i| i as f32 * scale);
        let back = anomaly_map_from_bytes(&anomaly_map_to_bytes(&map).unwrap()).unwrap();
        prop_assert_eq!(back.data(), map.data());
    }

    #[test]
    fn calibrations_round_trip(a in any::<f64>(), b in 1e-8f64..1e8, c in any::<f64>(), d in 1e-8f64..1e8) {
        prop_assume!(a.is_finite() && c.is_finite());
        let cal = ScoreCalibration { e_mu: a, e_sigma: b, v_mu: c, v_sigma: d };
        prop_assert_eq!(calibration_from_bytes(&calibration_to_bytes(&cal)).unwrap(), cal);
    }
}
