//! `tomoforge`: simulate low-dose fan-beam data, reconstruct it with FBP,
//! TV or the per-image network, and score the results.
//!
//! Values given on the command line override the JSON config file.

mod benchmark;
mod commands;
mod config;
mod pipeline;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::Method;
use tomoforge::recon::CheckpointMode;

#[derive(Debug, Parser)]
#[command(name = "tomoforge", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Rasterize a phantom and simulate Poisson-noisy measurements.
    Simulate(SimulateArgs),
    /// Reconstruct an image from a post-log sinogram.
    Reconstruct(ReconstructArgs),
    /// Score a reconstruction against a ground truth.
    Evaluate(EvaluateArgs),
    /// Run every method at every intensity and tabulate PSNR/SSIM.
    Benchmark(BenchmarkArgs),
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// `shepp-logan`, an ellipse list (.json) or an image file.
    #[arg(long)]
    phantom: Option<String>,
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    angles: Option<usize>,
    /// Photons per ray of the unattenuated beam.
    #[arg(long)]
    intensity: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Uniform background counts.
    #[arg(long)]
    background: Option<f64>,
}

#[derive(Debug, Args)]
struct ReconstructArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long, value_enum)]
    method: Method,
    /// Post-log sinogram (raw f32 with a sidecar).
    #[arg(long)]
    sinogram: Option<PathBuf>,
    /// Enables PSNR/SSIM curves and PSNR checkpoint selection.
    #[arg(long)]
    ground_truth: Option<PathBuf>,
    #[arg(long)]
    iterations: Option<usize>,
    /// Learning rate of the proposed method.
    #[arg(long)]
    lr: Option<f64>,
    /// TV weight.
    #[arg(long)]
    lambda: Option<f64>,
    /// Network initialization seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    checkpoint_mode: Option<CheckpointArg>,
    #[arg(long)]
    curve_stride: Option<usize>,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum CheckpointArg {
    BestPsnr,
    BestLoss,
}

impl From<CheckpointArg> for CheckpointMode {
    fn from(c: CheckpointArg) -> Self {
        match c {
            CheckpointArg::BestPsnr => CheckpointMode::BestPsnr,
            CheckpointArg::BestLoss => CheckpointMode::BestLoss,
        }
    }
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Reconstructed image.
    #[arg(long)]
    recon: PathBuf,
    #[arg(long)]
    ground_truth: PathBuf,
    /// Defaults to the description in the reconstruction's sidecar.
    #[arg(long)]
    method: Option<String>,
    /// Defaults to the intensity in the reconstruction's sidecar.
    #[arg(long)]
    intensity: Option<f64>,
    /// CSV file to append the row to.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BenchmarkArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Overrides the proposed method's iteration count.
    #[arg(long)]
    iterations: Option<usize>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => commands::simulate(a),
        Command::Reconstruct(a) => commands::reconstruct(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Benchmark(a) => benchmark::run(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
