use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use dispersal_harness::commands::run_command;
use dispersal_harness::config::{Command, ExperimentSpec};
use dispersal_harness::HarnessError;

/// Simulator and verification harness for selection-mutation dynamics of
/// dispersal.
#[derive(Debug, Parser)]
#[command(version)]
struct Cli {
    /// theta, lambda-surface, alpha-build, check-h1, floquet-test, hj,
    /// lax-oleinik, pde, converge or pipeline.
    command: String,
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// `key=value` or `section.key=value`; may be repeated.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn threads() -> Result<(), HarnessError> {
    if let Ok(raw) = std::env::var("DISPERSAL_THREADS") {
        let n: usize = raw.parse().map_err(|_| {
            HarnessError::config(format!(
                "DISPERSAL_THREADS must be a positive integer, got `{raw}`"
            ))
        })?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| HarnessError::config(e.to_string()))?;
    }
    Ok(())
}

fn execute(cli: &Cli) -> Result<serde_json::Value, HarnessError> {
    threads()?;
    let command: Command = cli.command.parse()?;
    let spec = ExperimentSpec::load(command, &cli.config, &cli.overrides, cli.out.clone())?;
    let outcome = run_command(&spec)?;
    if !outcome.failures.is_empty() {
        return Err(HarnessError::Check(outcome.failures.join("; ")));
    }
    Ok(outcome.summary)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(summary) => {
            println!(
                "{}",
                serde_json::to_string_pretty(&summary).expect("summary serialises")
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            let diag = e.diagnostic();
            eprintln!(
                "{}",
                serde_json::to_string_pretty(&diag).expect("diagnostic serialises")
            );
            if cli.out.is_dir() {
                let _ = std::fs::write(cli.out.join("error.json"), diag.to_string() + "\n");
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
