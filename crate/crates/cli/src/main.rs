//! `mmvae`: generate datasets, train the three fusion models, evaluate
//! them against the kinematic success checker and collect grid reports.
//!
//! Exit codes: 0 on success, 1 on runtime failures, 2 on usage or
//! configuration errors.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "mmvae", version, about = "Multimodal VAE training and evaluation harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ModelArg {
    Mvae,
    Mmvae,
    Mopoe,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ReconArg {
    Mse,
    Sigma,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded dataset for one grid cell.
    GenData {
        /// Dataset config file (JSON), e.g. one of the files in presets/.
        #[arg(long)]
        config: PathBuf,
        /// Number of demonstrations.
        #[arg(long, default_value_t = 500)]
        n: usize,
        /// Root seed; scene i of the dataset is derived from it.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory for the manifest and data blobs.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on a generated dataset.
    Train {
        /// Fusion model to train.
        #[arg(long, value_enum, required_unless_present = "resume")]
        model: Option<ModelArg>,
        /// Reconstruction term for images and trajectories; takes precedence
        /// over --model-config.
        #[arg(long, value_enum, default_value = "sigma")]
        recon: ReconArg,
        /// Dataset directory written by gen-data.
        #[arg(long)]
        data: PathBuf,
        /// Total number of epochs.
        #[arg(long, default_value_t = 200)]
        epochs: usize,
        /// Seed for parameter initialization, shuffling and noise.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory for checkpoints, the loss log and run metadata.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 32)]
        batch_size: usize,
        /// Adam step size.
        #[arg(long, default_value_t = 1e-3)]
        learning_rate: f64,
        /// Write a checkpoint every this many epochs (and after the last).
        #[arg(long, default_value_t = 10)]
        checkpoint_every: usize,
        /// JSON object overriding fields of the default model config.
        #[arg(long)]
        model_config: Option<PathBuf>,
        /// Continue from this checkpoint up to --epochs total epochs.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on fresh test scenes.
    Eval {
        /// Checkpoint written by train.
        #[arg(long)]
        ckpt: PathBuf,
        /// Dataset config file (JSON) describing the test scenes.
        #[arg(long)]
        config: PathBuf,
        /// Number of test scenes.
        #[arg(long, default_value_t = 100)]
        trials: usize,
        /// Seed for the test scenes; use one different from the training data.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Comma-separated ascending distance thresholds in meters.
        #[arg(long)]
        curve: Option<String>,
        /// Output directory for accuracy.json, diagnostics.jsonl and curve.csv.
        #[arg(long)]
        out: PathBuf,
    },
    /// Collect evaluation summaries into grid and plot-data CSV files.
    Report {
        /// Glob matching accuracy.json files written by `eval`.
        #[arg(long)]
        runs: String,
        /// Output directory for grid.csv, plot_data.csv and improvement.csv.
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the 34 grid-cell dataset configs.
    Presets {
        /// Output directory.
        #[arg(long, default_value = "presets")]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData { config, n, seed, out } => commands::gen_data(&config, n, seed, &out),
        Command::Train {
            model,
            recon,
            data,
            epochs,
            seed,
            out,
            batch_size,
            learning_rate,
            checkpoint_every,
            model_config,
            resume,
        } => commands::train(commands::TrainArgs {
            model,
            recon,
            data,
            epochs,
            seed,
            out,
            batch_size,
            learning_rate,
            checkpoint_every,
            model_config,
            resume,
        }),
        Command::Eval { ckpt, config, trials, seed, curve, out } => {
            commands::eval(&ckpt, &config, trials, seed, curve.as_deref(), &out)
        }
        Command::Report { runs, out } => commands::report(&runs, &out),
        Command::Presets { out } => commands::presets(&out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
