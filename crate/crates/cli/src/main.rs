//! `merm`: corrected GMM estimation on CSV data and Monte Carlo campaigns.
//!
//! Exit codes: 0 success, 2 invalid config or input, 3 numerical failure.
//! The worker count of campaigns is read from `MERM_WORKERS`.

mod config;
mod expr;
mod run;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::{load_config, Mode, RunConfig};
use crate::run::{run, RunError};

#[derive(Parser)]
#[command(name = "merm", version, about = "Measurement-error-robust GMM estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate on CSV data (estimate or bias-bound config).
    Estimate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run a Monte Carlo campaign.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the number of replications.
        #[arg(long)]
        reps: Option<usize>,
        /// Overrides the seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// List every problem in a config; prints nothing for a runnable config.
    Validate { config: PathBuf },
}

fn load(path: &Path) -> Result<RunConfig, RunError> {
    load_config(path).map_err(|e| RunError::Validation(vec![e]))
}

fn execute(command: Command) -> Result<(), RunError> {
    match command {
        Command::Estimate { config } => {
            let c = load(&config)?;
            if c.mode == Mode::Simulate {
                return Err(RunError::Validation(vec!["mode: simulate configs run with `merm simulate`".into()]));
            }
            report(run(&c)?);
        }
        Command::Simulate { config, reps, seed } => {
            let c = load(&config)?.with_overrides(reps, seed);
            if c.mode != Mode::Simulate {
                return Err(RunError::Validation(vec!["mode: only simulate configs run with `merm simulate`".into()]));
            }
            report(run(&c)?);
        }
        Command::Validate { config } => {
            let text = std::fs::read_to_string(&config)
                .map_err(|e| RunError::Validation(vec![format!("cannot read {}: {e}", config.display())]))?;
            let diags = match config::parse_config(&text) {
                Ok(c) => c.diagnostics(),
                Err(e) => vec![e],
            };
            for d in &diags {
                println!("{d}");
            }
            if !diags.is_empty() {
                return Err(RunError::Validation(Vec::new()));
            }
        }
    }
    Ok(())
}

fn report(artifacts: run::Artifacts) {
    for f in artifacts.files {
        println!("wrote {}", f.display());
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    std::panic::set_hook(Box::new(|_| {}));
    let outcome = std::panic::catch_unwind(|| execute(cli.command));
    let _ = std::panic::take_hook();
    match outcome {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            for m in e.messages() {
                eprintln!("error: {m}");
            }
            ExitCode::from(e.exit_code() as u8)
        }
        Err(_) => {
            eprintln!("error: internal failure during the numerical work");
            ExitCode::from(3)
        }
    }
}
