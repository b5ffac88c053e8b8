use stad::adam::AdamConfig;
use stad::dense::densify;
use stad::student::{
    compute_feature_stats, prepare_input, regression_loss, train_students, InputMode, StudentTrainConfig,
};
use stad::synthetic::generate_teacher_corpus;
use stad::teacher::{train_teacher, TeacherLossWeights, TeacherTrainConfig};

fn teacher_config(iterations: usize) -> TeacherTrainConfig {
    let mut cfg = TeacherTrainConfig::new(17).unwrap();
    cfg.descriptor_dim = 8;
    cfg.width_divisor = 16;
    cfg.weights = TeacherLossWeights::self_supervised();
    cfg.adam = AdamConfig::with_lr(1e-3, 1e-5);
    cfg.batch_size = 8;
    cfg.iterations = iterations;
    cfg
}

#[test]
fn teacher_loss_falls_over_fifty_iterations() {
    let corpus = generate_teacher_corpus(10, 40, 5);
    let ckpt = train_teacher(&corpus, None, &teacher_config(50), |_, _| {}).unwrap();
    let trace = &ckpt.loss_trace;
    assert_eq!(trace.len(), 50);
    let head: f32 = trace[..10].iter().sum::<f32>() / 10.0;
    let tail: f32 = trace[40..].iter().sum::<f32>() / 10.0;
    assert!(tail < head, "first ten {head}, last ten {tail}");
    // Same seed, same run.
    let again = train_teacher(&corpus, None, &teacher_config(50), |_, _| {}).unwrap();
    assert_eq!(again.loss_trace, ckpt.loss_trace);
}

#[test]
fn student_loss_falls_epoch_over_epoch() {
    let corpus = generate_teacher_corpus(8, 28, 6);
    let teacher = densify(&train_teacher(&corpus, None, &teacher_config(10), |_, _| {}).unwrap().net).unwrap();
    let stats = compute_feature_stats(&teacher, &corpus, InputMode::Dense).unwrap();
    let cfg = |epochs| StudentTrainConfig {
        students: 2,
        epochs,
        adam: AdamConfig::with_lr(2e-4, 0.0),
        seed: 4,
        mode: InputMode::Dense,
    };

    // With no epochs the ensemble is the initialization the real run starts from.
    let init = train_students(&teacher, &stats, &corpus, &cfg(0), |_, _| {}).unwrap();
    let mut initial = [0.0f64; 2];
    for img in &corpus {
        let input = prepare_input(&teacher, img, InputMode::Dense).unwrap();
        let target = stats.normalize(&teacher.forward_valid(&input).unwrap()).unwrap();
        for (s, pred) in init.predict(&input).unwrap().into_iter().enumerate() {
            initial[s] += regression_loss(&pred, &target).unwrap().0 as f64 / corpus.len() as f64;
        }
    }

    let mut seen = Vec::new();
    let trained = train_students(&teacher, &stats, &corpus, &cfg(5), |e, l| seen.push((e, l.to_vec()))).unwrap();
    assert_eq!(seen.len(), 5);
    for (s, losses) in trained.epoch_losses.iter().enumerate() {
        let mut prev = initial[s] as f32;
        let mut drops = 0;
        for &l in losses {
            drops += (l < prev) as usize;
            prev = l;
        }
        assert!(drops >= 4, "student {s}: initial {} then {losses:?}", initial[s]);
    }
    assert_eq!(seen.iter().map(|(_, l)| l[0]).collect::<Vec<_>>(), trained.epoch_losses[0]);
}
