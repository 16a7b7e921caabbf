//! `ecgxai`: config-driven runs of the ECG explainability toolkit.
//!
//! Every command reads one TOML config, resolves it (defaults filled, paths
//! made absolute) and writes its outputs plus `manifest.toml` into
//! `<out-dir>/<command>-<hash>`, where the hash covers the resolved config.
//! Exit codes: 0 success, 2 invalid config, 3 model load failure, 4 stage
//! failure.

mod commands;
mod config;
mod error;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::Command;
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "ecgxai", version, about = "Explainability runs for multi-lead ECG models")]
struct Cli {
    /// Config file, or a previous run's manifest.toml to repeat that run.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Root for run directories (default `runs`).
    #[arg(long, global = true, env = "EXECG_OUT_DIR")]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Sub,
}

#[derive(Debug, Subcommand)]
enum Sub {
    /// Attribution or counterfactual explanation of model inputs.
    Explain,
    /// Clinical chart with optional overlays.
    Chart,
    /// Synthetic dataset, reference model and concept sets.
    Synth,
    /// Concept sensitivity scores.
    Tcav,
}

fn run(cli: Cli) -> Result<PathBuf, CliError> {
    let command = match cli.command {
        Sub::Explain => Command::Explain,
        Sub::Chart => Command::Chart,
        Sub::Synth => Command::Synth,
        Sub::Tcav => Command::Tcav,
    };
    let path = cli.config.ok_or_else(|| CliError::config("--config is required"))?;
    let loaded = config::load(&path)?;
    let out_root = cli.out_dir.or_else(|| loaded.out_dir.clone()).unwrap_or_else(|| PathBuf::from("runs"));
    let resolved = loaded.resolve(command, cli.seed)?;
    commands::execute(&resolved, &out_root)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(dir) => {
            println!("{}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
