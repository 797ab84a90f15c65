mod commands;
mod data;
mod run_config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Brain-assisted speech enhancement: synthetic data, EEG preprocessing,
/// training, enhancement, evaluation, ablations and gradient checks.
///
/// Settings come from built-in defaults, then `--config`, then `--set`.
/// BASEN_THREADS caps worker threads (default 1, bit-reproducible).
#[derive(Debug, Parser)]
#[command(name = "basen", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Config sources shared by every subcommand.
#[derive(Debug, Args, Clone, Default)]
pub struct ConfigArgs {
    /// key=value config file (# comments allowed)
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Override one config key, e.g. --set channels=16 (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic cued two-talker dataset
    SynthData(commands::SynthData),
    /// Run the MUA front end on a raw EEG matrix container
    PreprocessEeg(commands::PreprocessEeg),
    /// Train a model on a dataset directory
    Train(commands::Train),
    /// Extract the attended talker from a mixture
    Enhance(commands::Enhance),
    /// Score a checkpoint (or the unprocessed mixture) on one split
    Evaluate(commands::Evaluate),
    /// Compare audio-only, concatenation and cross-attention fusion, then sweep cross-attention depth
    Ablate(commands::Ablate),
    /// Check every parameter gradient against finite differences
    Gradcheck(commands::Gradcheck),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match commands::run(Cli::parse().command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
