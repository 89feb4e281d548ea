mod commands;
mod config;

use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::PathBuf;
use std::process::ExitCode;

use gagcn::checks::CheckScale;
use gagcn::motiondata::SynthClass;
use gagcn::trainer::{AblationSuite, AveragingMode};
use gagcn::Error;

/// Train, evaluate and probe gating-adjacency GCN motion predictors.
#[derive(Debug, Parser)]
#[command(name = "gagcn", version, propagate_version = true)]
struct Cli {
    /// Worker threads for per-sample parallelism; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    /// Log filter: error, warn, info, debug or trace.
    #[arg(long, global = true, default_value = "info")]
    log_level: String,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model from a TOML run config; writes model.ckpt, loss.csv,
    /// gates.csv and train_log.jsonl to the output directory.
    Train(TrainArgs),
    /// Per-horizon error of a checkpoint on the config's data; writes report.csv.
    Eval(EvalArgs),
    /// Predict future frames from the last observed frames of a motion CSV.
    Predict(PredictArgs),
    /// Finite-difference gradient check; exits 1 if any parameter fails.
    Gradcheck(GradcheckArgs),
    /// Gated vs fixed adjacency, or a candidate-count sweep, on synthetic motion.
    Ablate(AblateArgs),
    /// Turn run outputs into plot-ready CSV series.
    PlotData(PlotDataArgs),
    /// Write synthetic motion CSVs and their skeleton descriptor.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Run config (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; overrides output.dir.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides train.epochs (default 10).
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Overrides train.batch_size (default 32).
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Overrides train.learning_rate (default 0.001).
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Overrides train.lr_decay, the per-epoch factor (default 0.96).
    #[arg(long)]
    pub lr_decay: Option<f64>,
    /// Overrides train.seed (default 0).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides model.spatial_candidates, n (default 4).
    #[arg(long)]
    pub spatial_candidates: Option<usize>,
    /// Overrides model.temporal_candidates, m (default 3).
    #[arg(long)]
    pub temporal_candidates: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum EvalSplit {
    /// The held-out validation windows used during training.
    Validation,
    /// Every window of the configured data.
    All,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Averaging {
    /// Mean error over frames up to the horizon.
    Cumulative,
    /// Error at the horizon frame only.
    AtHorizon,
}

impl From<Averaging> for AveragingMode {
    fn from(a: Averaging) -> Self {
        match a {
            Averaging::Cumulative => AveragingMode::Cumulative,
            Averaging::AtHorizon => AveragingMode::AtHorizon,
        }
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Run config (TOML) describing the data.
    #[arg(long)]
    pub config: PathBuf,
    /// Model checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Output directory; overrides output.dir.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Horizons in milliseconds.
    #[arg(long, value_delimiter = ',', default_value = "80,160,320,400,560,1000")]
    pub horizons: Vec<u32>,
    /// How errors are averaged over frames.
    #[arg(long, value_enum, default_value_t = Averaging::Cumulative)]
    pub mode: Averaging,
    /// Which windows to evaluate.
    #[arg(long, value_enum, default_value_t = EvalSplit::Validation)]
    pub split: EvalSplit,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Model checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Motion CSV with at least as many frames as the model observes.
    #[arg(long)]
    pub input: PathBuf,
    /// Skeleton descriptor; defaults to the one stored in the checkpoint.
    #[arg(long)]
    pub descriptor: Option<PathBuf>,
    /// Destination CSV for the predicted frames.
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Scale {
    /// Every differentiable operation.
    Ops,
    /// One gated layer.
    Layer,
    /// The toy model (4 joints, 5 → 3 frames, width 8, n = m = 2).
    Model,
}

impl From<Scale> for CheckScale {
    fn from(s: Scale) -> Self {
        match s {
            Scale::Ops => CheckScale::Ops,
            Scale::Layer => CheckScale::Layer,
            Scale::Model => CheckScale::Model,
        }
    }
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// What to check.
    #[arg(long, value_enum, default_value_t = Scale::Model)]
    pub scale: Scale,
    /// Seed for parameters and inputs.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-4)]
    pub eps: f64,
    /// Largest accepted relative error.
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    /// Test hook: perturb the analytic gradient of this parameter.
    #[arg(long)]
    pub corrupt: Option<String>,
    /// Also write gradcheck.csv to this directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Suite {
    /// Fixed-adjacency arm against the gated arm on seen and unseen classes.
    GatedVsStableUnseen,
    /// Gated arms over several (n, m) candidate counts.
    CandidateSweep,
}

impl From<Suite> for AblationSuite {
    fn from(s: Suite) -> Self {
        match s {
            Suite::GatedVsStableUnseen => AblationSuite::GatedVsStableUnseen,
            Suite::CandidateSweep => AblationSuite::CandidateSweep,
        }
    }
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// Ablation config (TOML); built-in defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides ablation.suite (default gated-vs-stable-unseen).
    #[arg(long, value_enum)]
    pub suite: Option<Suite>,
    /// Output directory; overrides output.dir.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Use seeds 0..N instead of ablation.seeds (default 0..5).
    #[arg(long)]
    pub seeds: Option<u64>,
    /// Overrides ablation.train.epochs (default 30).
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PlotDataArgs {
    /// Directory written by train (and optionally eval).
    #[arg(long)]
    pub run: PathBuf,
    /// Output directory; defaults to <run>/plots.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Motion classes to generate.
    #[arg(long, value_delimiter = ',', default_value = "walk_cycle,wave_arm,sit_down,figure8_drift")]
    pub classes: Vec<SynthClass>,
    /// Frames per sequence at 25 Hz.
    #[arg(long, default_value_t = 200)]
    pub frames: usize,
    /// Noise standard deviation in units of 100 mm.
    #[arg(long, default_value_t = 0.02)]
    pub noise: f64,
    /// Generator seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

/// Failures mapped to process exit codes.
#[derive(Debug)]
pub enum CliError {
    Core(Error),
    /// A check ran to completion and found a problem.
    CheckFailed(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::CheckFailed(_) => 1,
            CliError::Core(e) => match e {
                Error::Numeric(_) | Error::Oracle(_) | Error::Contract(_) => 1,
                Error::Config(_) | Error::Parse { .. } | Error::Dimension { .. } | Error::Shape(_) => 2,
                Error::Io { .. } | Error::Integrity(_) => 3,
            },
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::CheckFailed(m) => f.write_str(m),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .parse_filters(&cli.log_level)
        .format_timestamp(None)
        .init();
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
            log::warn!("could not configure {} threads: {e}", cli.threads);
        }
    }
    let result = match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Predict(a) => commands::predict(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::Ablate(a) => commands::ablate(a),
        Command::PlotData(a) => commands::plot_data(a),
        Command::Synth(a) => commands::synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
