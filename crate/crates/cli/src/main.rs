use clap::{Args, Parser, Subcommand};
use intake_core::graph::{parse_parts, BodyPart};
use intake_core::model::TcnMode;
use intake_core::run::{
    cmd_eval, cmd_predict, cmd_synth, cmd_train, inspect_graph, write_eval_report, EpochRecord, RunConfig,
};
use intake_core::Error;
use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

/// Eating and drinking gesture detection from skeleton keypoints.
#[derive(Parser, Debug)]
#[command(name = "intake", version)]
struct Cli {
    /// JSON run configuration; flags override its keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file or directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a labeled synthetic dataset.
    Synth(SynthArgs),
    /// Train a model and write checkpoints plus a metrics log.
    Train(TrainArgs),
    /// Write per-frame prediction CSVs for keypoint files.
    Predict(PredictArgs),
    /// Segment-wise precision/recall/F1 of predictions against labels.
    Eval(EvalArgs),
    /// Print the skeleton graph, hop distances and partition row sums.
    InspectGraph(GraphArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    duration_seconds: Option<f64>,
    #[arg(long)]
    fps: Option<f64>,
    #[arg(long)]
    jitter: Option<f64>,
    #[arg(long)]
    keypoint_dropout: Option<f64>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Dataset directories or keypoint files.
    #[arg(long, num_args = 1..)]
    train: Vec<PathBuf>,
    #[arg(long, num_args = 1..)]
    val: Vec<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    tcn_mode: Option<TcnMode>,
    /// Temporal kernel of every block in basic mode.
    #[arg(long)]
    basic_kernel: Option<usize>,
    /// Use the four-block desk-scale model.
    #[arg(long)]
    reduced: bool,
    #[arg(long)]
    parts: Option<String>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    window_seconds: Option<f64>,
    #[arg(long)]
    train_stride: Option<f64>,
    #[arg(long)]
    confidence_threshold: Option<f64>,
    #[arg(long)]
    target_train_f1: Option<f64>,
    /// Checkpoint directory to continue from.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Must select as many nodes as the checkpoint was trained on.
    #[arg(long)]
    parts: Option<String>,
    #[arg(long)]
    confidence_threshold: Option<f64>,
    /// Keypoint files, directories of them, or dataset directories.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Label CSVs, directories of them, or dataset directories.
    #[arg(long, num_args = 1.., required = true)]
    gt: Vec<PathBuf>,
    /// Prediction CSVs or directories of them.
    #[arg(long, num_args = 1.., required = true)]
    pred: Vec<PathBuf>,
    /// Comma-separated IoU thresholds.
    #[arg(long, value_delimiter = ',')]
    k: Vec<f64>,
}

#[derive(Args, Debug)]
struct GraphArgs {
    #[arg(long)]
    parts: Option<String>,
}

fn parts_of(s: &str) -> Result<Vec<BodyPart>, Error> {
    Ok(parse_parts(s)?.into_iter().collect())
}

fn require_out(out: &Option<PathBuf>, command: &str) -> Result<PathBuf, Error> {
    out.clone()
        .ok_or_else(|| Error::InvalidArgument(format!("{command} needs --out")))
}

fn print_epoch(total: usize, r: &EpochRecord) {
    let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
    println!(
        "epoch {}/{total} step {} params {} train_loss {:.4} train_f1@0.5 {} val_loss {} val_f1@0.5 {}{}",
        r.epoch,
        r.global_step,
        r.parameter_count,
        r.train_loss,
        opt(r.train_f1),
        opt(r.val_loss),
        opt(r.val_f1),
        if r.best { " *" } else { "" }
    );
}

fn run(cli: Cli) -> Result<(), Error> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
        config.synth.seed = seed;
    }
    match cli.command {
        Command::Synth(a) => {
            let out = require_out(&cli.out, "synth")?;
            if let Some(v) = a.count {
                config.synth_count = v;
            }
            let s = &mut config.synth;
            s.duration_seconds = a.duration_seconds.unwrap_or(s.duration_seconds);
            s.fps = a.fps.unwrap_or(s.fps);
            s.jitter = a.jitter.unwrap_or(s.jitter);
            s.keypoint_dropout = a.keypoint_dropout.unwrap_or(s.keypoint_dropout);
            let m = cmd_synth(&config.synth, config.synth_count, &out)?;
            println!(
                "wrote {} sequences to {} (eat {}, drink {})",
                m.sequences.len(),
                out.display(),
                m.totals.eat,
                m.totals.drink
            );
        }
        Command::Train(a) => {
            let out = require_out(&cli.out, "train")?;
            if a.reduced {
                config.model = intake_core::model::ModelConfig::reduced(config.model.num_nodes);
            }
            if !a.train.is_empty() {
                config.train = a.train;
            }
            if !a.val.is_empty() {
                config.val = a.val;
            }
            if let Some(p) = &a.parts {
                config.parts = parts_of(p)?;
            }
            let m = &mut config.model;
            m.tcn_mode = a.tcn_mode.unwrap_or(m.tcn_mode);
            m.basic_kernel = a.basic_kernel.unwrap_or(m.basic_kernel);
            m.smoothing_lambda = a.lambda.unwrap_or(m.smoothing_lambda);
            m.smoothing_tau = a.tau.unwrap_or(m.smoothing_tau);
            config.epochs = a.epochs.unwrap_or(config.epochs);
            config.batch_size = a.batch_size.unwrap_or(config.batch_size);
            config.optimizer.lr = a.lr.unwrap_or(config.optimizer.lr);
            config.window_seconds = a.window_seconds.unwrap_or(config.window_seconds);
            config.train_stride = a.train_stride.unwrap_or(config.train_stride);
            config.confidence_threshold = a.confidence_threshold.unwrap_or(config.confidence_threshold);
            config.target_train_f1 = a.target_train_f1.or(config.target_train_f1);
            config.resume = a.resume.or(config.resume);
            let total = config.epochs;
            let summary = cmd_train(&config, &out, &mut |r| print_epoch(total, r))?;
            if summary.stopped_early {
                println!("stopped early: training F1@0.5 reached the target");
            }
            println!("checkpoints in {}", out.display());
        }
        Command::Predict(a) => {
            let out = require_out(&cli.out, "predict")?;
            config.confidence_threshold = a.confidence_threshold.unwrap_or(config.confidence_threshold);
            let parts: Option<BTreeSet<BodyPart>> = a.parts.as_deref().map(parse_parts).transpose()?;
            let written = cmd_predict(&a.checkpoint, &a.inputs, &config, parts.as_ref(), &out)?;
            println!("wrote {} prediction files to {}", written.len(), out.display());
        }
        Command::Eval(a) => {
            if !a.k.is_empty() {
                config.thresholds = a.k;
            }
            let summary = cmd_eval(&a.gt, &a.pred, &config.thresholds)?;
            print!("{}", summary.to_table());
            if let Some(out) = &cli.out {
                write_eval_report(&summary, out)?;
            }
        }
        Command::InspectGraph(a) => {
            if let Some(p) = &a.parts {
                config.parts = parts_of(p)?;
            }
            let report = inspect_graph(&config.part_set())?;
            for w in report["warnings"].as_array().into_iter().flatten() {
                eprintln!("warning: {}", w.as_str().unwrap_or_default());
            }
            let text = serde_json::to_string_pretty(&report)? + "\n";
            match &cli.out {
                Some(path) => write_file(path, &text)?,
                None => print!("{text}"),
            }
        }
    }
    Ok(())
}

fn write_file(path: &Path, text: &str) -> Result<(), Error> {
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{line}");
            ExitCode::FAILURE
        }
    }
}
