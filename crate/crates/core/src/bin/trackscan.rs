use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use trackscan::corpus::{generate_corpus, read_corpus_dir, write_corpus_dir, Roi, SceneKind, SceneParams};
use trackscan::persistence::{load_model, save_model};
use trackscan::pipeline::{
    detect_stream, write_report, BenchmarkGallery, SamplerConfig, DEFAULT_ANALYZE_FPS,
    DEFAULT_INPUT_FPS, DEFAULT_THRESHOLD,
};
use trackscan::training::{build_pairs, evaluate, gradcheck_seeded, share, train_with_progress, TrainConfig};
use trackscan::Error;

const GRADCHECK_TOLERANCE: f64 = 1e-5;

#[derive(Parser)]
#[command(name = "trackscan", version, about = "Railway track anomaly detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic image corpus as numbered PGM files.
    GenData(GenData),
    /// Train a model on benchmark, positive and negative image directories.
    Train(Train),
    /// Print pair accuracy and distance statistics as JSON.
    Eval(Eval),
    /// Score a directory of frames and write a JSONL report.
    Detect(Detect),
    /// Compare analytic and finite-difference gradients.
    Gradcheck(Gradcheck),
}

#[derive(Args)]
struct GenData {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_parser = parse_kind)]
    kind: SceneKind,
    #[arg(long, default_value_t = 500)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.25)]
    base_intensity: f64,
    #[arg(long, default_value_t = 20)]
    gauge: usize,
}

#[derive(Args)]
struct PairDirs {
    #[arg(long)]
    pos: PathBuf,
    #[arg(long)]
    neg: PathBuf,
    #[arg(long)]
    bench: PathBuf,
}

#[derive(Args)]
struct Train {
    #[command(flatten)]
    dirs: PairDirs,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    #[arg(long, default_value_t = 16)]
    batch: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.95)]
    target_acc: f64,
    #[arg(long)]
    warm_start: Option<PathBuf>,
}

#[derive(Args)]
struct Eval {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    dirs: PairDirs,
}

#[derive(Args)]
struct Detect {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    bench: PathBuf,
    #[arg(long)]
    frames: PathBuf,
    #[arg(long)]
    report: PathBuf,
    #[arg(long, default_value_t = DEFAULT_INPUT_FPS)]
    input_fps: f64,
    #[arg(long, default_value_t = DEFAULT_ANALYZE_FPS)]
    analyze_fps: f64,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    threshold: f64,
    /// Region of interest as x,y,w,h in frame pixels.
    #[arg(long, value_parser = parse_roi)]
    roi: Option<Roi>,
}

#[derive(Args)]
struct Gradcheck {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 200)]
    samples: usize,
}

fn parse_kind(s: &str) -> Result<SceneKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_roi(s: &str) -> Result<Roi, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

enum Failure {
    Run(Error),
    /// Work completed but the result failed its check.
    Check(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } | Error::Pgm { .. } | Error::ModelFile { .. } | Error::Frame { .. } => 2,
        Error::Shape(_) | Error::InvalidArgument(_) => 3,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
        Err(Failure::Check(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(3)
        }
    }
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::GenData(args) => gen_data(args)?,
        Command::Train(args) => train(args)?,
        Command::Eval(args) => eval(args)?,
        Command::Detect(args) => detect(args)?,
        Command::Gradcheck(args) => {
            let report = gradcheck_seeded(args.seed, args.samples)?;
            println!("{:e}", report.max_relative_error);
            if report.max_relative_error > GRADCHECK_TOLERANCE {
                return Err(Failure::Check(format!(
                    "gradient check failed: max relative error {:e} over {} parameters (max absolute error {:e})",
                    report.max_relative_error, report.checked, report.max_absolute_error
                )));
            }
        }
    }
    Ok(())
}

fn gen_data(args: GenData) -> trackscan::Result<()> {
    let params = SceneParams {
        base_intensity: args.base_intensity,
        gauge_px: args.gauge,
        ..SceneParams::new(args.kind, args.seed)
    };
    let images = generate_corpus(&params, args.count)?;
    write_corpus_dir(&args.out, &images)?;
    Ok(())
}

fn load_pairs(dirs: &PairDirs) -> trackscan::Result<Vec<trackscan::LabeledPair>> {
    let bench = share(read_corpus_dir(&dirs.bench)?);
    let pos = share(read_corpus_dir(&dirs.pos)?);
    let neg = share(read_corpus_dir(&dirs.neg)?);
    build_pairs(&bench, &pos, &neg)
}

fn history_path(model_path: &Path) -> PathBuf {
    model_path.with_file_name("history.csv")
}

fn train(args: Train) -> trackscan::Result<()> {
    let pairs = load_pairs(&args.dirs)?;
    let config = TrainConfig {
        learning_rate: args.lr,
        momentum: args.momentum,
        batch_size: args.batch,
        max_epochs: args.epochs,
        target_accuracy: args.target_acc,
        seed: args.seed,
        warm_start: args.warm_start,
        ..TrainConfig::default()
    };
    let outcome = train_with_progress(&config, &pairs, |e| {
        eprintln!("epoch {:>3}  loss {:.6}  val_acc {:.4}", e.epoch, e.mean_loss, e.val_accuracy);
    })?;
    save_model(&outcome.model, &args.out)?;
    outcome.history.write_csv(&history_path(&args.out))?;
    match outcome.final_val_accuracy {
        Some(acc) => println!("{acc}"),
        None => println!("none"),
    }
    if !outcome.reached_target && config.max_epochs > 0 {
        eprintln!(
            "target accuracy {} not reached within {} epochs",
            config.target_accuracy, config.max_epochs
        );
    }
    Ok(())
}

fn eval(args: Eval) -> trackscan::Result<()> {
    let model = load_model(&args.model)?;
    let pairs = load_pairs(&args.dirs)?;
    let report = evaluate(&model, &pairs)?;
    println!("{}", serde_json::to_string(&report).expect("report serializes"));
    Ok(())
}

fn detect(args: Detect) -> trackscan::Result<()> {
    let model = load_model(&args.model)?;
    let gallery = BenchmarkGallery::new(&model, read_corpus_dir(&args.bench)?)?;
    let sampler = SamplerConfig::new(args.input_fps, args.analyze_fps)?;
    let (records, events) = detect_stream(&model, &gallery, &args.frames, &sampler, args.roi, args.threshold)?;
    write_report(&records, &events, &args.report)?;
    eprintln!(
        "{} frames scored, {} anomalous, {} events",
        records.len(),
        records.iter().filter(|r| r.anomalous).count(),
        events.len()
    );
    Ok(())
}
