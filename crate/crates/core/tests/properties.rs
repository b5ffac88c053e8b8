use proptest::prelude::*;
use stad::arch::{Architecture, PatchNet};
use stad::dense::{densify, extract_dense};
use stad::metrics::{integrate_pro_curve, pro_at_threshold, pro_auc, pro_curve, roc_auc, BinaryMask};
use stad::ops::{conv2d, leaky, maxpool2d_dilated};
use stad::student::{
    calibrate, image_level_score, regression_error_from, variance_from, FeatureStats, ScaleArtifacts, StudentEnsemble,
};
use stad::teacher::{compactness_loss, metric_loss, triplet_margin};
use stad::Tensor;

fn values(len: usize) -> impl Strategy<Value = Vec<f32>> {
    prop::collection::vec(-2.0f32..2.0, len)
}

proptest! {
    #[test]
    fn leaky_relu_is_monotone_and_identity_on_positives(a in -10.0f32..10.0, b in -10.0f32..10.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(leaky(lo, 5e-3) <= leaky(hi, 5e-3));
        if a >= 0.0 {
            prop_assert_eq!(leaky(a, 5e-3), a);
        }
    }

    #[test]
    fn conv_and_pool_shapes_follow_the_floor_law(
        h in 4usize..14, w in 4usize..14, k in 1usize..4, stride in 1usize..3, dilation in 1usize..3,
    ) {
        let span = dilation * (k - 1) + 1;
        prop_assume!(span <= h && span <= w);
        let x = Tensor::from_fn(&[1, 2, h, w], |i| (i as f32 * 0.37).sin());
        let wt = Tensor::from_fn(&[3, 2, k, k], |i| (i as f32 * 0.11).cos());
        let out = conv2d(&x, &wt, &Tensor::zeros(&[3]), stride, dilation).unwrap();
        let expect = |n: usize| (n - span) / stride + 1;
        prop_assert_eq!(out.shape(), &[1, 3, expect(h), expect(w)]);
        let pooled = maxpool2d_dilated(&x, k, stride, dilation).unwrap();
        prop_assert_eq!(pooled.shape(), &[1, 2, expect(h), expect(w)]);
        // deterministic: same inputs, same bits
        prop_assert_eq!(conv2d(&x, &wt, &Tensor::zeros(&[3]), stride, dilation).unwrap(), out);
    }

    #[test]
    fn metric_loss_is_nonnegative_and_exchange_symmetric(
        a in values(4), p in values(4), n in values(4), margin in 0.1f32..2.0,
    ) {
        let l = triplet_margin(&a, &p, &n, margin);
        prop_assert!(l >= 0.0);
        prop_assert_eq!(l, triplet_margin(&p, &a, &n, margin));
        let t = |v: &Vec<f32>| Tensor::new(vec![1, 4], v.clone()).unwrap();
        let head = metric_loss(&t(&a), &t(&p), &t(&n), margin).unwrap();
        prop_assert_eq!(head.value, l);
        if l == 0.0 {
            prop_assert!(head.grads.iter().all(|g| g.data().iter().all(|&v| v == 0.0)));
        }
    }

    #[test]
    fn compactness_is_invariant_under_positive_affine_maps(
        y in values(6 * 4), scale in prop::collection::vec(0.2f32..5.0, 4), shift in values(4),
    ) {
        let base = compactness_loss(&Tensor::new(vec![6, 4], y.clone()).unwrap()).unwrap().value;
        let moved: Vec<f32> = y.iter().enumerate().map(|(i, v)| v * scale[i % 4] + shift[i % 4]).collect();
        let after = compactness_loss(&Tensor::new(vec![6, 4], moved).unwrap()).unwrap().value;
        prop_assert!((base - after).abs() <= 1e-5 * (1.0 + base.abs()), "{} vs {}", base, after);
    }

    #[test]
    fn roc_of_negated_scores_is_complementary(scores in prop::collection::hash_set(-1000i32..1000, 4..30), seed in any::<u64>()) {
        let scores: Vec<f32> = scores.into_iter().map(|s| s as f32).collect();
        let labels: Vec<bool> = (0..scores.len()).map(|i| (seed >> (i % 64)) & 1 == 1 || i == 0).collect();
        prop_assume!(labels.iter().any(|&l| !l));
        let neg: Vec<f32> = scores.iter().map(|s| -s).collect();
        let sum = roc_auc(&scores, &labels).unwrap() + roc_auc(&neg, &labels).unwrap();
        prop_assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pro_auc_is_bounded_and_rank_invariant(
        levels in prop::collection::vec(0u8..20, 64), mask in prop::collection::vec(any::<bool>(), 64),
    ) {
        prop_assume!(mask.iter().any(|&m| m) && mask.iter().any(|&m| !m));
        let map = Tensor::new(vec![8, 8], levels.iter().map(|&v| v as f32).collect()).unwrap();
        // strictly increasing and exact in f32 for these integers
        let warped = map.map(|v| v * v * v + 3.0 * v);
        let m = BinaryMask::new(8, 8, mask).unwrap();
        let a = pro_auc(std::slice::from_ref(&map), std::slice::from_ref(&m), 0.3).unwrap();
        let b = pro_auc(&[warped], &[m], 0.3).unwrap();
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert_eq!(a, b);
    }
}

/// Evaluates the curve at every distinct score directly, then integrates.
fn sweep_oracle(maps: &[Tensor], masks: &[BinaryMask], limit: f64) -> f64 {
    let mut thresholds: Vec<f32> = maps.iter().flat_map(|m| m.data().iter().copied()).collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let mut pts = vec![(0.0, 0.0)];
    for t in thresholds {
        let (pro, fpr) = pro_at_threshold(maps, masks, t).unwrap();
        pts.push((fpr, pro));
    }
    let mut area = 0.0;
    for w in pts.windows(2) {
        let ((f0, p0), (f1, p1)) = (w[0], w[1]);
        if f0 >= limit {
            break;
        }
        if f1 <= limit {
            area += (f1 - f0) * (p0 + p1) / 2.0;
        } else {
            let p = p0 + (limit - f0) / (f1 - f0) * (p1 - p0);
            area += (limit - f0) * (p0 + p) / 2.0;
            break;
        }
    }
    area / limit
}

#[test]
fn pro_auc_matches_a_dense_threshold_sweep() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let maps: Vec<Tensor> = (0..5).map(|_| Tensor::from_fn(&[10, 10], |_| rng.random_range(0..30) as f32 / 7.0)).collect();
        let masks: Vec<BinaryMask> = (0..5)
            .map(|_| {
                let (y0, x0) = (rng.random_range(0..8), rng.random_range(0..8));
                BinaryMask::from_fn(10, 10, |y, x| (y0..y0 + 3).contains(&y) && (x0..x0 + 2).contains(&x))
            })
            .collect();
        for limit in [0.05, 0.3, 1.0] {
            let got = integrate_pro_curve(&pro_curve(&maps, &masks, 0).unwrap(), limit).unwrap();
            let want = sweep_oracle(&maps, &masks, limit);
            assert!((got - want).abs() <= 1e-6, "{got} vs {want}");
        }
    }
}

#[test]
fn pro_definition_examples() {
    let gt = BinaryMask::from_fn(4, 8, |y, x| y < 2 && (x < 2 || x >= 6));
    let indicator = Tensor::from_fn(&[4, 8], |i| gt.pixels[i] as u8 as f32);
    assert_eq!(pro_at_threshold(std::slice::from_ref(&indicator), std::slice::from_ref(&gt), 0.5).unwrap(), (1.0, 0.0));
    assert_eq!(pro_auc(std::slice::from_ref(&indicator), std::slice::from_ref(&gt), 0.3).unwrap(), 1.0);
    let half = Tensor::from_fn(&[4, 8], |i| (gt.pixels[i] && i % 8 < 2) as u8 as f32);
    assert_eq!(pro_at_threshold(&[half], &[gt], 0.5).unwrap(), (0.5, 0.0));
    assert_eq!(roc_auc(&[1.0; 4], &[true, false, true, false]).unwrap(), 0.5);
}

fn tiny(p: usize) -> Architecture {
    Architecture::scaled(p, 6, 16).unwrap()
}

#[test]
fn dense_output_matches_input_size_and_shares_parameters() {
    for p in [17, 33, 65] {
        let net = PatchNet::new(tiny(p), 1).unwrap();
        let dnet = densify(&net).unwrap();
        for p2 in dnet.patch_net().params.iter() {
            assert_eq!(net.params.value(&p2.name).unwrap(), &p2.value);
        }
        for (h, w) in [(p, p), (p + 3, p + 8)] {
            let img = Tensor::from_fn(&[3, h, w], |i| (i % 13) as f32 / 13.0);
            assert_eq!(extract_dense(&dnet, &img).unwrap().shape(), [6, h, w]);
        }
    }
}

#[test]
fn scores_are_invariant_under_member_permutation() {
    let preds: Vec<Tensor> = (0..4).map(|k| Tensor::from_fn(&[5, 3, 3], |i| ((i * 7 + k * 13) % 11) as f32 / 3.0)).collect();
    let target = Tensor::from_fn(&[5, 3, 3], |i| (i % 4) as f32);
    let reversed: Vec<Tensor> = preds.iter().rev().cloned().collect();
    assert_eq!(regression_error_from(&preds, &target).unwrap(), regression_error_from(&reversed, &target).unwrap());
    let (a, b) = (variance_from(&preds).unwrap(), variance_from(&reversed).unwrap());
    assert!(a.max_abs_diff(&b).unwrap() <= 1e-6);
}

#[test]
fn covariance_metadata_does_not_change_scores() {
    let teacher = PatchNet::new(tiny(17), 1).unwrap();
    let img = Tensor::from_fn(&[3, 20, 20], |i| (i % 17) as f32 / 17.0);
    let stats = FeatureStats::new(vec![0.0; 6], vec![1.0; 6]).unwrap();
    let cal = calibrate(&[Tensor::from_fn(&[2, 2], |i| i as f32)], &[Tensor::from_fn(&[2, 2], |i| i as f32 * 0.5)]).unwrap();
    let mut ens = StudentEnsemble::new(vec![PatchNet::new(tiny(17), 2).unwrap(), PatchNet::new(tiny(17), 3).unwrap()]).unwrap();
    let a = ScaleArtifacts::new(densify(&teacher).unwrap(), ens.clone(), stats.clone(), cal).unwrap().score_map(&img).unwrap();
    ens.covariance = 7.5;
    let b = ScaleArtifacts::new(densify(&teacher).unwrap(), ens, stats, cal).unwrap().score_map(&img).unwrap();
    assert_eq!(a, b);
}

#[test]
fn image_level_score_of_a_cloned_teacher() {
    let teacher = PatchNet::new(tiny(33), 4).unwrap();
    let stats = FeatureStats::new(vec![0.0; 6], vec![1.0; 6]).unwrap();
    let cal = calibrate(
        &[Tensor::from_fn(&[3, 3], |i| i as f32 * 0.3)],
        &[Tensor::from_fn(&[3, 3], |i| (i % 2) as f32)],
    )
    .unwrap();
    let ens = StudentEnsemble::new(vec![teacher.clone()]).unwrap();
    let scale = ScaleArtifacts::new(densify(&teacher).unwrap(), ens, stats, cal).unwrap();
    let img = Tensor::from_fn(&[3, 50, 40], |i| (i % 9) as f32 / 9.0);
    let score = image_level_score(&[scale], &img).unwrap();
    let want = -cal.e_mu / cal.e_sigma - cal.v_mu / cal.v_sigma;
    assert!((score as f64 - want).abs() <= 1e-6, "{score} vs {want}");
}
