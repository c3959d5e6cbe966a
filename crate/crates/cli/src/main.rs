// SPDX-License-Identifier: Apache-2.0

//! Command-line front end: prepare data, attack it, train, erase the
//! attacked records by unlearning or retraining, and compare.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::RunConfig;
use error::CliError;

#[derive(Parser)]
#[command(name = "recunlearn", version, about = "Influence-based unlearning for recommenders")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration; missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Replaces every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Artifact directory (overrides `out` in the configuration).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Generate a planted-preference ratings CSV.
    Synth,
    /// Parse, binarize, k-core filter and split the ratings.
    Prepare,
    /// Flip a share of the training labels and write the manifest.
    Attack,
    /// Train on the (attacked) training split.
    Train,
    /// Erase the manifest's records from the trained model.
    Unlearn,
    /// Retrain from scratch without the manifest's records.
    Retrain,
    /// Compare original, retrained and unlearned models on the test split.
    Eval,
    /// Sweep attack ratios, timing unlearning against retraining.
    Bench,
    /// Print the resolved configuration as TOML.
    Config,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut config = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    config.override_with(cli.seed, cli.out);
    config.validate()?;
    match cli.command {
        Command::Synth => commands::synth(&config),
        Command::Prepare => commands::prepare(&config),
        Command::Attack => commands::attack(&config),
        Command::Train => commands::train_cmd(&config),
        Command::Unlearn => commands::unlearn(&config),
        Command::Retrain => commands::retrain(&config),
        Command::Eval => commands::eval(&config),
        Command::Bench => commands::bench(&config),
        Command::Config => {
            let text = toml::to_string(&config).map_err(|e| CliError::Usage(e.to_string()))?;
            print!("{text}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
