//! `finsent`: the pipeline as subcommands.
//!
//! Exit codes: 0 success, 2 invalid configuration or arguments, 3 data
//! errors, 4 backend errors.

mod args;
mod commands;
mod config;
mod error;
mod manifest;

use std::io::Write;
use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};
use config::RunConfig;
use error::CliError;

fn run(cli: &Cli) -> Result<commands::Outcome, CliError> {
    let cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    match &cli.command {
        Command::Ingest(a) => commands::ingest(a, &cfg),
        Command::Split(a) => commands::split(a, &cfg),
        Command::Upsample(a) => commands::upsample_cmd(a, &cfg),
        Command::Augment(a) => commands::augment(a, &cfg),
        Command::Analyze(a) => commands::analyze(a, &cfg),
        Command::Featurize(a) => commands::featurize(a, &cfg),
        Command::TrainLinear(a) => commands::train_linear(a, &cfg),
        Command::TrainEncoder(a) => commands::train_encoder(a, &cfg),
        Command::Predict(a) => commands::predict(a, &cfg),
        Command::Evaluate(a) => commands::evaluate(a, &cfg),
        Command::Compare(a) => commands::compare_cmd(a, &cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(out) => {
            let text =
                if cli.json { serde_json::to_string_pretty(&out.json).unwrap_or_default() + "\n" } else { out.text };
            // A closed pipe (e.g. `| head`) is not a failure of the command.
            let _ = std::io::stdout().write_all(text.as_bytes());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("finsent: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
