//! `jetforge` command line: data generation, training, evaluation, search,
//! pruning, quantization and reports. Every output goes under `--out`.

mod commands;
mod config;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] jetforge::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("plot: {0}")]
    Plot(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Core(jetforge::Error::Config(_)) => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "jetforge", version, about = "Jet-tagging transformer toolchain")]
pub struct Cli {
    /// JSON run configuration; missing sections take defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Run seed; overrides the config and feeds every module.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Worker threads where a command can use them.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset (jets.csv + manifest.json).
    Datagen {
        #[arg(long)]
        jets: Option<usize>,
    },
    /// Train a model from the config.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Evaluate a checkpoint on the validation split.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
    },
    /// Architecture search, or `hpo report` on an existing store.
    Hpo(HpoArgs),
    /// Iterative structured pruning of a checkpoint.
    Prune {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
    },
    /// Quantization-aware training from scratch.
    Quantize {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// FLOP and parameter table for the configured model or a checkpoint.
    Flops {
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Front table, HV curve and plots from a study store.
    Report {
        #[arg(long)]
        store: PathBuf,
    },
}

#[derive(Debug, Args)]
#[command(args_conflicts_with_subcommands = true)]
pub struct HpoArgs {
    #[command(subcommand)]
    pub action: Option<HpoAction>,
    #[arg(long)]
    pub sampler: Option<String>,
    #[arg(long)]
    pub trials: Option<usize>,
    /// Trial store; defaults to `<out>/study.jsonl`.
    #[arg(long)]
    pub store: Option<PathBuf>,
    /// Dataset directory for trial training.
    #[arg(long, required_unless_present = "synthetic")]
    pub data: Option<PathBuf>,
    /// Score trials with the deterministic synthetic objective instead of
    /// training.
    #[arg(long)]
    pub synthetic: bool,
}

#[derive(Debug, Subcommand)]
pub enum HpoAction {
    Report {
        #[arg(long)]
        store: PathBuf,
    },
}

fn init_logging() {
    let env = env_logger::Env::new().filter_or("JETFORGE_LOG", "warn");
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}

fn main() -> ExitCode {
    init_logging();
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
