use std::path::Path;
use std::process::{Command, Output};

fn stad(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stad"))
        .args(args)
        .env_remove("STAD_RUN_DIR")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn ok(out: Output) -> Output {
    assert!(
        out.status.success(),
        "stad failed ({:?}):\n{}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

const TINY: [&str; 18] = [
    "--scales",
    "17",
    "--image-side",
    "32",
    "--width-divisor",
    "16",
    "--descriptor-dim",
    "8",
    "--lambda-k",
    "0",
    "--lambda-m",
    "1",
    "--teacher-iterations",
    "5",
    "--teacher-batch-size",
    "4",
    "--student-epochs",
    "1",
];

fn stage(cmd: &str, data: &Path, corpus: &Path, run: &Path) -> Output {
    let mut args = vec![
        cmd,
        "--dataset",
        data.to_str().unwrap(),
        "--teacher-corpus",
        corpus.to_str().unwrap(),
        "--run-dir",
        run.to_str().unwrap(),
        "--students",
        "2",
    ];
    args.extend(TINY);
    stad(&args)
}

#[test]
fn full_pipeline_writes_every_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("cat");
    let corpus = tmp.path().join("corpus");
    let run = tmp.path().join("run");
    ok(stad(&[
        "generate-synthetic",
        "--out",
        data.to_str().unwrap(),
        "--corpus-out",
        corpus.to_str().unwrap(),
        "--corpus-images",
        "4",
        "--side",
        "32",
        "--train",
        "4",
        "--test-defective",
        "2",
        "--test-good",
        "1",
        "--defect-size",
        "8",
    ]));
    assert!(data.join("ground_truth/foreign_patch/000_mask.png").is_file());

    for cmd in ["train-teacher", "train-students", "calibrate", "score"] {
        ok(stage(cmd, &data, &corpus, &run));
    }
    for f in ["config.json", "teacher_p17.ckpt", "students_p17.ckpt", "stats_p17.bin", "calibration_p17.bin"] {
        assert!(run.join(f).is_file(), "missing {f}");
    }
    assert!(run.join("maps/foreign_patch/000.amap").is_file());
    assert!(run.join("maps/foreign_patch/000.png").is_file());
    assert!(run.join("maps/good/002.amap").is_file());

    let out = ok(stage("evaluate", &data, &corpus, &run));
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["test_images"], 3);
    let pro = summary["pro_auc"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&pro));
    let curve = std::fs::read_to_string(run.join("pro_curve.tsv")).unwrap();
    assert!(curve.starts_with("threshold\tfpr\tmean_pro\n"));

    // The echoed config reproduces the run on its own.
    let echoed = run.join("config.json");
    ok(stad(&["evaluate", "--config", echoed.to_str().unwrap()]));
}

#[test]
fn run_dir_comes_from_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_stad"))
        .args(["score", "--lambda-k", "0", "--dataset", tmp.path().to_str().unwrap()])
        .env("STAD_RUN_DIR", tmp.path().join("envrun"))
        .output()
        .unwrap();
    // The dataset is empty, so the stage fails after echoing its config.
    assert_eq!(code(&out), 3);
    let text = std::fs::read_to_string(tmp.path().join("envrun/config.json")).unwrap();
    assert!(text.contains("envrun"));
}

#[test]
fn exit_codes_separate_error_kinds() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    let run = run.to_str().unwrap();

    // Invalid scale: configuration error.
    assert_eq!(code(&stad(&["train-teacher", "--run-dir", run, "--scales", "16"])), 2);
    // Unknown field in a config file: configuration error.
    let bad = tmp.path().join("bad.json");
    std::fs::write(&bad, r#"{"no_such_field": 1}"#).unwrap();
    assert_eq!(code(&stad(&["score", "--config", bad.to_str().unwrap()])), 2);
    // Missing dataset: data error.
    let missing = tmp.path().join("nowhere");
    let args = ["score", "--run-dir", run, "--lambda-k", "0", "--dataset", missing.to_str().unwrap()];
    assert_eq!(code(&stad(&args)), 3);
    // Clap usage errors keep clap's own code.
    assert_eq!(code(&stad(&["train-teacher", "--input-mode", "sideways"])), 2);
}
