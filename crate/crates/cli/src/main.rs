//! `dynae`: generate datasets, train models, evaluate and export latents.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 numerical
//! failure during training or evaluation.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use config::ModelKind;

/// Output directory override.
pub const ENV_OUT_DIR: &str = "DYNAE_OUT_DIR";
/// Thread-count override.
pub const ENV_THREADS: &str = "DYNAE_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "dynae",
    version,
    about = "Dynamics-constrained autoencoders with Langevin latent priors"
)]
struct Cli {
    /// Worker threads (also `DYNAE_THREADS`). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Recipe {
    /// Warped 2D three-well Langevin trajectory.
    ThreeWell,
    /// Square sprite walking in x and y.
    Sprite2,
    /// Square sprite walking in scale, x and y.
    Sprite3,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic dataset (observations, factors, descriptor).
    Generate {
        #[arg(long, value_enum)]
        recipe: Recipe,
        #[arg(long, default_value_t = 50_000)]
        frames: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory (falls back to `DYNAE_OUT_DIR`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Integrator step of the three-well simulation.
        #[arg(long, default_value_t = 0.01)]
        dt_sim: f64,
        /// Integrator steps per recorded three-well frame.
        #[arg(long, default_value_t = 10)]
        stride: usize,
        /// Standard deviation of one sprite-walk step.
        #[arg(long, default_value_t = 0.05)]
        step_sigma: f64,
        /// Side of the square sprite images, in pixels.
        #[arg(long, default_value_t = 16)]
        image_size: usize,
    },
    /// Train a model described by a JSON experiment config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's model selector.
        #[arg(long, value_enum)]
        model: Option<ModelKind>,
        /// Overrides the config's output directory (and `DYNAE_OUT_DIR`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a checkpoint against a dataset's known factors.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Report directory (falls back to `DYNAE_OUT_DIR`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Points per axis of the exported force/diffusion grid.
        #[arg(long, default_value_t = 20)]
        grid: usize,
        /// Bins per axis of the free-energy histogram.
        #[arg(long, default_value_t = 30)]
        bins: usize,
    },
    /// Encode a dataset's observations into a latent trajectory file.
    ExportLatent {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Output trajectory file (relative names resolve under `DYNAE_OUT_DIR`).
        #[arg(long)]
        out: PathBuf,
        /// Also write a CSV mirror next to the trajectory.
        #[arg(long)]
        csv: bool,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = commands::resolve_threads(cli.threads).and_then(|threads| {
        log::debug!("running with {threads} thread(s)");
        match cli.command {
            Command::Generate {
                recipe,
                frames,
                seed,
                out,
                dt_sim,
                stride,
                step_sigma,
                image_size,
            } => commands::generate(&commands::GenerateArgs {
                recipe,
                frames,
                seed,
                out,
                dt_sim,
                stride,
                step_sigma,
                image_size,
            }),
            Command::Train { config, model, out } => commands::train(&config, model, out),
            Command::Evaluate {
                checkpoint,
                dataset,
                out,
                grid,
                bins,
            } => commands::evaluate(&checkpoint, &dataset, out, grid, bins),
            Command::ExportLatent {
                checkpoint,
                dataset,
                out,
                csv,
            } => commands::export_latent(&checkpoint, &dataset, &out, csv),
        }
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
