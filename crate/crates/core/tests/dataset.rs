use std::path::Path;

use stad::dataset::*;
use stad::metrics::BinaryMask;
use stad::synthetic::{generate_category, SyntheticConfig, DEFECT_LABEL};
use stad::{StadError, Tensor};

fn small() -> SyntheticConfig {
    SyntheticConfig {
        side: 32,
        train: 10,
        test_defective: 3,
        test_good: 2,
        defect_size: 8,
        ..Default::default()
    }
}

fn write_small(root: &Path) {
    write_category(&generate_category(&small(), 1).unwrap(), root).unwrap();
}

#[test]
fn indexes_a_written_category() {
    let dir = tempfile::tempdir().unwrap();
    write_small(dir.path());
    let idx = load_dataset(dir.path(), 0).unwrap();
    assert_eq!(idx.train.len() + idx.validation.len(), 10);
    assert_eq!(idx.validation.len(), validation_count(10));
    assert!(idx.train.iter().all(|p| !idx.validation.contains(p)));
    assert_eq!(idx.test.len(), 5);
    let defective: Vec<_> = idx.test.iter().filter(|e| e.is_anomalous()).collect();
    assert_eq!(defective.len(), 3);
    assert!(defective.iter().all(|e| e.label == DEFECT_LABEL && e.mask.is_some()));
    assert!(idx.test.iter().filter(|e| !e.is_anomalous()).all(|e| e.mask.is_none()));
    // The split depends on the seed only.
    assert_eq!(load_dataset(dir.path(), 0).unwrap(), idx);
}

#[test]
fn images_and_masks_survive_png() {
    let dir = tempfile::tempdir().unwrap();
    let cat = generate_category(&small(), 2).unwrap();
    write_category(&cat, dir.path()).unwrap();
    let idx = load_dataset(dir.path(), 0).unwrap();
    for (entry, original) in idx.test.iter().zip(&cat.test) {
        let img = load_image(&entry.path).unwrap();
        assert_eq!(img.shape(), [3, 32, 32]);
        // 8-bit quantization only
        assert!(img.max_abs_diff(&original.image).unwrap() <= 0.5 / 255.0 + 1e-6);
        if let Some(m) = &entry.mask {
            assert_eq!(&load_mask(m).unwrap(), original.mask.as_ref().unwrap());
        }
    }
    let resized = load_image_resized(&idx.test[0].path, 20).unwrap();
    assert_eq!(resized.shape(), [3, 20, 20]);
    let m = idx.test.iter().find_map(|e| e.mask.clone()).unwrap();
    let rm = load_mask_resized(&m, 64).unwrap();
    assert_eq!((rm.height, rm.width), (64, 64));
    assert!(rm.count() > 0);
}

#[test]
fn missing_or_mismatched_masks_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    write_small(dir.path());
    let gt = dir.path().join("ground_truth").join(DEFECT_LABEL);
    let first = std::fs::read_dir(&gt).unwrap().next().unwrap().unwrap().path();

    save_mask(&BinaryMask::empty(16, 16), &first).unwrap();
    assert!(matches!(load_dataset(dir.path(), 0), Err(StadError::Data(_))));

    std::fs::remove_file(&first).unwrap();
    assert!(matches!(load_dataset(dir.path(), 0), Err(StadError::Data(_))));
    // Image-level protocols accept defective images without masks.
    let idx = load_image_level_dataset(dir.path(), 0).unwrap();
    assert_eq!(idx.test.iter().filter(|e| e.is_anomalous() && e.mask.is_none()).count(), 1);
}

#[test]
fn bad_inputs_map_to_data_and_image_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(load_dataset(&dir.path().join("absent"), 0), Err(StadError::Data(_))));
    assert!(matches!(load_dataset(dir.path(), 0), Err(StadError::Data(_))));
    assert!(matches!(list_corpus_images(dir.path()), Err(StadError::Data(_))));

    let bogus = dir.path().join("bogus.png");
    std::fs::write(&bogus, b"not a png").unwrap();
    assert!(matches!(load_image(&bogus), Err(StadError::Image { .. })));
    assert_eq!(list_corpus_images(dir.path()).unwrap(), vec![bogus]);
}

#[test]
fn masks_treat_any_nonzero_pixel_as_defect() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.png");
    // A gray level well below 255 still marks a defect.
    let img = Tensor::from_fn(&[1, 2, 3], |i| if i % 2 == 0 { 0.0 } else { 0.2 });
    save_image(&img, &path).unwrap();
    let m = load_mask(&path).unwrap();
    assert_eq!(m.pixels, vec![false, true, false, true, false, true]);
}

#[test]
fn calibration_set_falls_back_to_training_images() {
    let dir = tempfile::tempdir().unwrap();
    let cat = generate_category(&SyntheticConfig { train: 1, ..small() }, 3).unwrap();
    write_category(&cat, dir.path()).unwrap();
    let idx = load_dataset(dir.path(), 0).unwrap();
    assert!(idx.validation.is_empty());
    assert_eq!(idx.calibration_set(), idx.train.as_slice());
}
