//! `genadapt` command-line entry point.

mod commands;
mod error;
mod settings;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use crate::error::Code;
use crate::settings::{EvalFlags, FeaturesFlags, FinetuneFlags, SynthFlags, TrainFlags, VerifyArgs};

/// Gender-domain adaptation of a small CTC/attention speech recogniser.
///
/// Settings come from flags, then an optional `--config` JSON file, then
/// built-in defaults. `GENADAPT_SEED` supplies the seed when no `--seed` is
/// given.
#[derive(Debug, Parser)]
#[command(name = "genadapt", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic gender-tagged corpus and its manifest.
    Synth(SynthFlags),
    /// Extract and cache features for every utterance of a manifest.
    Features(FeaturesFlags),
    /// Train a model from scratch.
    Train(TrainFlags),
    /// Continue training a checkpoint on a subset with a fresh optimizer.
    Finetune(FinetuneFlags),
    /// Decode and score models, grouped by gender, speaker or accent.
    Eval(EvalFlags),
    /// Run a built-in oracle suite.
    Verify(VerifyArgs),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => Code::Usage.into(),
            };
        }
    };
    let result = match cli.command {
        Command::Synth(f) => commands::synth(f),
        Command::Features(f) => commands::features(f),
        Command::Train(f) => commands::train(f),
        Command::Finetune(f) => commands::finetune(f),
        Command::Eval(f) => commands::eval(f),
        Command::Verify(a) => commands::verify(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.code.into()
        }
    }
}
