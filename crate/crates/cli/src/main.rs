//! `psp`: synthesize, preprocess, train, sample, evaluate and report.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};
use psp_core::checkpoint::FORMAT_VERSION;
use psp_core::{CoreError, ErrorClass};

use crate::config::{RunConfig, OUTPUT_DIR_ENV};

#[derive(Parser)]
#[command(name = "psp", about = "Probabilistic suffix prediction for event logs")]
struct Cli {
    /// JSON run configuration; defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set train.epochs=5`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    sets: Vec<String>,
    /// Worker threads for sampling and evaluation.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Generate a synthetic repair-process log.
    Synth,
    /// Split a log, fit the encoding and print dataset statistics.
    Preprocess,
    /// Train a model on a preprocessed bundle.
    Train,
    /// Draw Monte Carlo suffixes for the test prefixes.
    Sample,
    /// Score most-likely and sampled suffixes on the test split.
    Evaluate,
    /// Rebuild metrics and plots from stored per-prefix records.
    Report,
}

fn version() -> String {
    format!("{} (checkpoint format {FORMAT_VERSION})", env!("CARGO_PKG_VERSION"))
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the worker pool")?;
    }
    let env_out = std::env::var(OUTPUT_DIR_ENV).ok();
    let mut cfg = RunConfig::load(cli.config.as_deref(), &cli.sets, env_out).context("loading configuration")?;
    cfg.resolve_paths();
    let (name, result) = match cli.command {
        Command::Synth => ("synth", commands::synth(&cfg)),
        Command::Preprocess => ("preprocess", commands::preprocess(&cfg)),
        Command::Train => ("train", commands::train(&cfg)),
        Command::Sample => ("sample", commands::sample(&cfg)),
        Command::Evaluate => ("evaluate", commands::evaluate(&cfg)),
        Command::Report => ("report", commands::report(&cfg)),
    };
    result.with_context(|| format!("{name} failed"))
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<CoreError>()).map(CoreError::class) {
        Some(ErrorClass::Config) => 2,
        Some(ErrorClass::Data) => 3,
        Some(ErrorClass::Numeric) => 4,
        None => 1,
    }
}

fn main() -> ExitCode {
    let matches = Cli::command().version(version()).get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
