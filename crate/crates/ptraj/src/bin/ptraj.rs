//! Command-line front end for the trajectory synthesis pipeline.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ptraj::commands::{
    cmd_accountant, cmd_evaluate, cmd_generate, cmd_preprocess, cmd_train, TrainTarget,
};
use ptraj::config::RunConfig;
use ptraj::error::Result;

#[derive(Parser)]
#[command(
    name = "ptraj",
    version,
    about = "Differentially private synthetic trajectory generation"
)]
struct Cli {
    /// Run configuration file (`key = value` lines); defaults when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Master seed for every randomized stage.
    #[arg(long, global = true, default_value_t = 0, value_name = "INT")]
    seed: u64,

    /// Directory for output files and run manifests.
    #[arg(long, global = true, default_value = "out", value_name = "DIR")]
    out: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Grid raw taxi logs (one `lat lon occupied unix_time` file per taxi)
    /// into a trajectory dataset.
    Preprocess {
        /// Directory of `*.txt` raw logs.
        raw_dir: PathBuf,
    },
    /// Train the initialization and/or transition models with DP-SGD.
    Train {
        /// Processed dataset file.
        dataset: PathBuf,
        /// Which model to fit.
        #[arg(long, value_enum, default_value_t = TrainTarget::Both)]
        model: TrainTarget,
    },
    /// Sample synthetic trajectories from trained models.
    Generate {
        /// Trained initialization model file.
        ti_model: PathBuf,
        /// Trained transition model file.
        tpg_model: PathBuf,
        /// Trajectories to produce (default: the training-set size).
        #[arg(long, value_name = "INT")]
        count: Option<usize>,
    },
    /// Score a synthetic dataset against the original.
    Evaluate {
        /// Original dataset file.
        original: PathBuf,
        /// Synthetic dataset file.
        synthetic: PathBuf,
    },
    /// Privacy cost of a training configuration, without training.
    Accountant {
        /// Number of records in the training set.
        dataset_size: usize,
        /// Expected batch size.
        batch_size: usize,
        /// Noise multiplier (0 means non-private).
        sigma: f64,
        /// Training epochs.
        epochs: usize,
        /// Privacy failure probability (default: 1/dataset_size).
        delta: Option<f64>,
    },
}

fn run(cli: Cli) -> Result<String> {
    let cfg = match &cli.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    match cli.command {
        Command::Preprocess { raw_dir } => cmd_preprocess(&cfg, &raw_dir, &cli.out),
        Command::Train { dataset, model } => cmd_train(&cfg, &dataset, model, cli.seed, &cli.out),
        Command::Generate { ti_model, tpg_model, count } => {
            cmd_generate(&cfg, &ti_model, &tpg_model, count, cli.seed, &cli.out)
        }
        Command::Evaluate { original, synthetic } => {
            cmd_evaluate(&cfg, &original, &synthetic, cli.seed, &cli.out)
        }
        Command::Accountant { dataset_size, batch_size, sigma, epochs, delta } => {
            cmd_accountant(&cfg, dataset_size, batch_size, sigma, epochs, delta, &cli.out)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
