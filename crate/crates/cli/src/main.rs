mod config;
mod error;
mod run;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::{CommandKind, ExperimentConfig, Opts};
use crate::error::CliError;

/// Uniqueness and re-identification experiments over GPS mobility traces.
#[derive(Parser)]
#[command(name = "traceprint", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse, filter and coarsen a dataset into the canonical trace CSV
    Ingest(Opts),
    /// Generate a synthetic dataset
    Synth(Opts),
    /// Truncate coordinates and/or bucket timestamps
    Coarsen(Opts),
    /// Windowed distance, speed and direction signatures
    Features(Opts),
    /// Uniqueness of sampled points or movement features
    Uniqueness(Opts),
    /// Unseen-point classification accuracy, optionally on reduced traces
    Classify(Opts),
    /// Pick the temporal scale with the best top-1 accuracy
    TuneTau(Opts),
    /// Per-class and class-averaged geometric separability
    Separability(Opts),
    /// Uniqueness as a function of population size
    SweepUsers(Opts),
}

impl Command {
    fn split(self) -> (CommandKind, Opts) {
        match self {
            Command::Ingest(o) => (CommandKind::Ingest, o),
            Command::Synth(o) => (CommandKind::Synth, o),
            Command::Coarsen(o) => (CommandKind::Coarsen, o),
            Command::Features(o) => (CommandKind::Features, o),
            Command::Uniqueness(o) => (CommandKind::Uniqueness, o),
            Command::Classify(o) => (CommandKind::Classify, o),
            Command::TuneTau(o) => (CommandKind::TuneTau, o),
            Command::Separability(o) => (CommandKind::Separability, o),
            Command::SweepUsers(o) => (CommandKind::SweepUsers, o),
        }
    }
}

fn main_inner() -> Result<(), CliError> {
    let (kind, opts) = Cli::parse().command.split();
    let cfg = ExperimentConfig::resolve(kind, &opts)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| CliError::Config(format!("cannot start {} worker threads: {e}", cfg.threads)))?;
    pool.install(|| run::run(&cfg))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match main_inner() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
