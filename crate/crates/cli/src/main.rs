//! `cran`: dataset generation, training, evaluation, sweeps, timing and
//! property verification for learned C-RAN beamforming.

mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Learned joint beamforming and fronthaul quantization for downlink C-RAN
#[derive(Parser, Debug)]
#[command(name = "cran", version, about)]
pub struct Cli {
    /// Worker threads (defaults to all cores)
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Flat key=value file; command-line flags take precedence over it
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Log verbosity (repeat for more)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Sample channel instances and write them to a dataset file
    Generate(GenerateArgs),
    /// Train a parameter network without labels
    Train(TrainArgs),
    /// Score a checkpoint or a baseline on a test set
    Eval(EvalArgs),
    /// Mean sum-rate of several methods along an SNR or capacity axis
    Sweep(SweepArgs),
    /// Per-sample wall time of each method
    BenchTime(BenchArgs),
    /// Run the property suites
    Verify(VerifyArgs),
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    /// Number of samples
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// proposed or dilearn
    #[arg(long)]
    pub variant: Option<String>,
    /// desk or paper
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub max_iterations: Option<usize>,
    #[arg(long)]
    pub validation_interval: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Fixed training set; without it batches are drawn fresh every iteration
    #[arg(long)]
    pub train_data: Option<PathBuf>,
    /// Validation set; without it one is sampled from a separate seed
    #[arg(long)]
    pub val_data: Option<PathBuf>,
    #[arg(long)]
    pub val_size: Option<usize>,
    /// Directory receiving the checkpoint and the training log
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Write 0 in the wall_ms column so logs are reproducible byte for byte
    #[arg(long)]
    pub no_wall_clock: bool,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Trained model; omit to score a baseline given by --method
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// mrt or local-search
    #[arg(long)]
    pub method: Option<String>,
    /// Dataset file; without it --n samples are drawn with --seed
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Per-sample CSV
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    /// snr or capacity
    #[arg(long)]
    pub axis: Option<String>,
    /// Axis values (dB for snr, bit/symbol for capacity)
    #[arg(long, value_delimiter = ',')]
    pub values: Option<Vec<f64>>,
    /// Power budget in dB while sweeping capacity
    #[arg(long)]
    pub snr: Option<f64>,
    /// Fronthaul capacity while sweeping SNR
    #[arg(long)]
    pub capacity: Option<f64>,
    /// Comma-separated subset of proposed, dilearn, mrt, local-search
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<String>>,
    #[arg(long)]
    pub proposed_checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub dilearn_checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Without checkpoints, freshly initialized networks of the desk shape are timed
    #[arg(long)]
    pub proposed_checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub dilearn_checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    /// Deliberately break a step to confirm the suites notice (scaling)
    #[arg(long)]
    pub inject_fault: Option<String>,
    /// Divide every case count by this factor
    #[arg(long)]
    pub quick: Option<usize>,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Io(String),
    Failed(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Failed(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
            CliError::Failed(m) => write!(f, "{m}"),
        }
    }
}

impl From<cran_core::Error> for CliError {
    fn from(e: cran_core::Error) -> Self {
        use cran_core::Error as E;
        match e {
            E::Config(_) | E::InvalidParams(_) | E::Dimension(_) | E::SizeGuard(_) => CliError::Usage(e.to_string()),
            E::Io(_) | E::Format(_) => CliError::Io(e.to_string()),
            other => CliError::Failed(other.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("cran: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
