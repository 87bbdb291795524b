//! Experiment pipeline CLI.
//!
//! `thermens <command> --config <path> [--seed <int>] [--out <dir>]`
//!
//! Exit codes: 0 success, 2 configuration/validation error, 1 runtime error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use thermens_core::pipeline::{run_command, ExperimentConfig};
use thermens_core::Error;

#[derive(Parser)]
#[command(name = "thermens", version, about = "Dynamic thermal model ensembles: simulate, fit, train, evaluate, control")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate per-room data streams and the train/test split.
    Simulate(CommonArgs),
    /// Fit the base-model library from the training rooms.
    Fit(CommonArgs),
    /// Train the hierarchical agents (and the flat ablation).
    Train(CommonArgs),
    /// Score the ensemble and baselines on the held-out rooms.
    Evaluate(CommonArgs),
    /// Closed-loop controller case study on one test room.
    MpcRun(CommonArgs),
    /// Aggregate tables from the evaluation artifacts.
    Report(CommonArgs),
}

#[derive(clap::Args)]
struct CommonArgs {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the configured global seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the configured output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate(_) => "simulate",
            Command::Fit(_) => "fit",
            Command::Train(_) => "train",
            Command::Evaluate(_) => "evaluate",
            Command::MpcRun(_) => "mpc-run",
            Command::Report(_) => "report",
        }
    }

    fn args(&self) -> &CommonArgs {
        match self {
            Command::Simulate(a)
            | Command::Fit(a)
            | Command::Train(a)
            | Command::Evaluate(a)
            | Command::MpcRun(a)
            | Command::Report(a) => a,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let args = cli.command.args();

    let mut cfg = match ExperimentConfig::load(&args.config) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.out_dir = out.clone();
    }

    match run_command(&cfg, cli.command.name()) {
        Ok(()) => {
            println!("{} done -> {}", cli.command.name(), cfg.out_dir.display());
            ExitCode::SUCCESS
        }
        Err(e @ Error::Config(_)) | Err(e @ Error::Contract(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
