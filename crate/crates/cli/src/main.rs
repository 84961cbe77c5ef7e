mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),

    #[error(transparent)]
    Core(#[from] least_volume::Error),

    #[error("{context}: {source}")]
    Io { context: String, source: std::io::Error },

    #[error("verification failed: {0}")]
    Verification(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Usage(_) => 1,
            Self::Core(_) | Self::Io { .. } => 2,
            Self::Verification(_) => 3,
        }
    }

    pub fn io(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> Self {
        let context = context.into();
        move |source| Self::Io { context, source }
    }
}

/// Least-volume autoencoder experiments.
#[derive(Debug, Parser)]
#[command(name = "lvae", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a dataset file and its factors sidecar.
    Gendata(GendataArgs),
    /// Train an autoencoder and write a run directory.
    Train(TrainArgs),
    /// Compute latent dimension metrics for a checkpoint.
    Analyze(AnalyzeArgs),
    /// Run a verification suite.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
pub struct GendataArgs {
    /// curve1d, surface2d, circles or idx.
    pub kind: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Sample count (default 50 for curve1d, 100 for surface2d, 3000 for circles).
    #[arg(long)]
    pub n: Option<usize>,
    /// Circle image side length.
    #[arg(long, default_value_t = 32)]
    pub size: usize,
    /// Surface noise standard deviation.
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    /// IDX image file for the idx kind.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Zero-pad IDX images to this side length.
    #[arg(long)]
    pub pad: Option<usize>,
    /// Output dataset path (default `<kind>.lvds`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset file written by gendata.
    #[arg(long)]
    pub data: Option<String>,
    /// toy1d, toy2d, conv_synthetic, conv_synthetic_small or linear.
    #[arg(long)]
    pub arch: Option<String>,
    #[arg(long)]
    pub latent_dim: Option<usize>,
    /// Run directory.
    #[arg(long)]
    pub out: PathBuf,
    /// vol, l1, lasso, st or none.
    #[arg(long = "reg")]
    pub regularizer: Option<String>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// mse or bce.
    #[arg(long)]
    pub loss: Option<String>,
    /// Linear λ warmup over this many epochs.
    #[arg(long)]
    pub lambda_warmup: Option<usize>,
    #[arg(long)]
    pub power_iterations: Option<usize>,
    /// Remove decoder spectral normalization.
    #[arg(long)]
    pub no_spectral_norm: bool,
    /// Write 0 in the history `seconds` column.
    #[arg(long)]
    pub no_timing: bool,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Explained-reconstruction threshold for the dimension estimate.
    #[arg(long, default_value_t = 0.01)]
    pub threshold: f64,
    /// Reconstruction tolerance reported next to ε.
    #[arg(long, default_value_t = 0.05)]
    pub delta: f64,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// gradients, spectral, bounds, pca, interpolation or all.
    pub suite: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// JSON report path.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Gendata(a) => commands::gendata(a),
        Command::Train(a) => commands::train(a),
        Command::Analyze(a) => commands::analyze(a),
        Command::Verify(a) => commands::verify(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("lvae: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
