use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use stad::benchmark::{run_synthetic_benchmark, BenchmarkConfig};
use stad::config::RunConfig;
use stad::dataset::{save_image, write_category};
use stad::pipeline::{self, RUN_DIR_ENV};
use stad::student::InputMode;
use stad::synthetic::{generate_category, generate_teacher_corpus, SyntheticConfig};
use stad::StadError;

#[derive(Parser)]
#[command(name = "stad", version, about = "Student-teacher anomaly detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pretrain one teacher per scale.
    TrainTeacher(Stage),
    /// Train student ensembles, feature statistics and calibration.
    TrainStudents(Stage),
    /// Recompute score calibration on the validation split.
    Calibrate(Stage),
    /// Write anomaly maps and overlays for every test image.
    Score(Stage),
    /// Compute PRO and ROC tables from the scored maps.
    Evaluate(Stage),
    /// Write a synthetic texture category (and optionally a teacher corpus).
    GenerateSynthetic(Synthetic),
    /// Run the end-to-end synthetic benchmark in memory.
    Benchmark(Benchmark),
}

#[derive(Args)]
struct Stage {
    /// JSON run configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args, Default)]
struct Overrides {
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, env = RUN_DIR_ENV)]
    run_dir: Option<PathBuf>,
    #[arg(long)]
    teacher_corpus: Option<PathBuf>,
    #[arg(long)]
    distill_targets: Option<String>,
    #[arg(long)]
    image_side: Option<usize>,
    /// Comma-separated patch sizes, e.g. `17,33,65`.
    #[arg(long, value_delimiter = ',')]
    scales: Option<Vec<usize>>,
    #[arg(long)]
    descriptor_dim: Option<usize>,
    #[arg(long)]
    width_divisor: Option<usize>,
    /// `dense` or `patch`.
    #[arg(long, value_parser = parse_mode)]
    input_mode: Option<InputMode>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lambda_k: Option<f32>,
    #[arg(long)]
    lambda_m: Option<f32>,
    #[arg(long)]
    lambda_c: Option<f32>,
    #[arg(long)]
    margin: Option<f32>,
    #[arg(long)]
    teacher_iterations: Option<usize>,
    #[arg(long)]
    teacher_batch_size: Option<usize>,
    #[arg(long)]
    teacher_lr: Option<f32>,
    #[arg(long)]
    teacher_weight_decay: Option<f32>,
    #[arg(long)]
    students: Option<usize>,
    #[arg(long)]
    student_epochs: Option<usize>,
    #[arg(long)]
    student_lr: Option<f32>,
    #[arg(long)]
    student_weight_decay: Option<f32>,
    #[arg(long)]
    adam_beta1: Option<f32>,
    #[arg(long)]
    adam_beta2: Option<f32>,
    #[arg(long)]
    adam_eps: Option<f32>,
    #[arg(long)]
    fpr_limit: Option<f64>,
    #[arg(long)]
    max_curve_points: Option<usize>,
}

fn parse_mode(s: &str) -> Result<InputMode, String> {
    match s {
        "dense" => Ok(InputMode::Dense),
        "patch" => Ok(InputMode::Patch),
        _ => Err(format!("unknown input mode {s:?} (expected dense or patch)")),
    }
}

macro_rules! apply {
    ($cfg:ident, $o:ident, $($field:ident),*) => {
        $(if let Some(v) = $o.$field { $cfg.$field = v; })*
    };
}

impl Overrides {
    fn apply(self, cfg: &mut RunConfig) {
        let o = self;
        if o.teacher_corpus.is_some() {
            cfg.teacher_corpus = o.teacher_corpus;
        }
        if o.distill_targets.is_some() {
            cfg.distill_targets = o.distill_targets;
        }
        apply!(
            cfg, o, dataset, run_dir, image_side, scales, descriptor_dim, width_divisor, input_mode, seed, lambda_k,
            lambda_m, lambda_c, margin, teacher_iterations, teacher_batch_size, teacher_lr, teacher_weight_decay,
            students, student_epochs, student_lr, student_weight_decay, adam_beta1, adam_beta2, adam_eps, fpr_limit,
            max_curve_points
        );
    }
}

impl Stage {
    fn resolve(self) -> stad::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| StadError::Config(format!("cannot read {}: {e}", path.display())))?;
                serde_json::from_str(&text).map_err(|e| StadError::Config(format!("{}: {e}", path.display())))?
            }
            None => RunConfig::default(),
        };
        self.overrides.apply(&mut cfg);
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct Synthetic {
    /// Category root to write (MVTec layout).
    #[arg(long)]
    out: PathBuf,
    /// Also write this many generic teacher-corpus images here.
    #[arg(long)]
    corpus_out: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    corpus_images: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 128)]
    side: usize,
    #[arg(long, default_value_t = 100)]
    train: usize,
    #[arg(long, default_value_t = 20)]
    test_defective: usize,
    #[arg(long, default_value_t = 10)]
    test_good: usize,
    #[arg(long, default_value_t = 16)]
    defect_size: usize,
}

#[derive(Args)]
struct Benchmark {
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long)]
    teacher_iterations: Option<usize>,
    #[arg(long)]
    student_epochs: Option<usize>,
}

fn log(msg: &str) {
    eprintln!("{msg}");
}

fn run(cli: Cli) -> stad::Result<()> {
    match cli.command {
        Command::TrainTeacher(s) => pipeline::train_teacher_stage(&s.resolve()?, log),
        Command::TrainStudents(s) => pipeline::train_students_stage(&s.resolve()?, log),
        Command::Calibrate(s) => pipeline::calibrate_stage(&s.resolve()?, log),
        Command::Score(s) => pipeline::score_stage(&s.resolve()?, log),
        Command::Evaluate(s) => {
            let summary = pipeline::evaluate_stage(&s.resolve()?, |_| {})?;
            println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
            Ok(())
        }
        Command::GenerateSynthetic(s) => {
            let cfg = SyntheticConfig {
                side: s.side,
                train: s.train,
                test_defective: s.test_defective,
                test_good: s.test_good,
                defect_size: s.defect_size,
                ..Default::default()
            };
            write_category(&generate_category(&cfg, s.seed)?, &s.out)?;
            if let Some(dir) = &s.corpus_out {
                for (i, img) in generate_teacher_corpus(s.corpus_images, s.side, s.seed ^ 0x5eed).iter().enumerate() {
                    save_image(img, &dir.join(format!("{i:04}.png")))?;
                }
            }
            log(&format!("wrote {}", s.out.display()));
            Ok(())
        }
        Command::Benchmark(b) => {
            let mut cfg = BenchmarkConfig::standard(b.seed)?;
            if let Some(n) = b.teacher_iterations {
                cfg.teacher.iterations = n;
            }
            if let Some(n) = b.student_epochs {
                cfg.students.epochs = n;
            }
            let out = run_synthetic_benchmark(&cfg, log)?;
            let summary = serde_json::json!({
                "pro_auc": out.pro_auc,
                "image_roc_auc": out.image_roc_auc,
            });
            println!("{summary}");
            Ok(())
        }
    }
}

fn exit_code(e: &StadError) -> u8 {
    match e {
        StadError::Config(_) => 2,
        StadError::Data(_) | StadError::Image { .. } => 3,
        StadError::NonFinite(_) => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
