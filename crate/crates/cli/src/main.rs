//! `hhk`: command-line front end for the optimal consumption solvers.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical failure,
//! 4 verification failure.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("verification failure: {0}")]
    Verification(String),
}

impl From<hhk_core::Error> for CliError {
    fn from(e: hhk_core::Error) -> Self {
        match e {
            hhk_core::Error::InvalidParams(_) | hhk_core::Error::GridMismatch | hhk_core::Error::TooManyCandidates { .. } => {
                CliError::Config(e.to_string())
            }
            other => CliError::Numerical(other.to_string()),
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Io(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Verification(_) => 4,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config_error",
            CliError::Io(_) => "io_error",
            CliError::Numerical(_) => "numerical_failure",
            CliError::Verification(_) => "verification_failure",
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "hhk", version, about = "Optimal consumption with local substitution and recursive utility")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run configuration.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    /// Override a config field, e.g. `--set market.w=2` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Output directory, overriding `output.dir`.
    #[arg(short, long, global = true)]
    out: Option<PathBuf>,
    /// Seed for randomized starts, overriding `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// More log output on standard error (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Y, U, ∇V and Φ of a plan as CSV.
    Evaluate,
    /// Closed-form Epstein–Zin solution with KKT audit.
    SolveEz,
    /// General constructor with KKT audit.
    Solve,
    /// KKT report for a plan.
    Verify,
    /// Value iteration.
    Dp,
    /// Brute-force oracles against the solver's plan.
    Oracle,
    /// Closed-form solutions over a parameter grid.
    Sweep,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Evaluate => "evaluate",
            Command::SolveEz => "solve-ez",
            Command::Solve => "solve",
            Command::Verify => "verify",
            Command::Dp => "dp",
            Command::Oracle => "oracle",
            Command::Sweep => "sweep",
        }
    }
}

fn run(cli: &Cli) -> Result<serde_json::Value, CliError> {
    let path = cli.config.as_ref().ok_or_else(|| CliError::Config("--config is required".into()))?;
    let mut overrides = cli.overrides.clone();
    if let Some(seed) = cli.seed {
        overrides.push(format!("seed={seed}"));
    }
    let (mut cfg, raw) = config::load(path, &overrides)?;
    if let Some(dir) = &cli.out {
        cfg.output.dir = dir.clone();
    }
    let mut out = output::Out::new(&cfg.output.dir)?;
    let outcome = match cli.command {
        Command::Evaluate => commands::evaluate_cmd(&cfg, &mut out),
        Command::SolveEz => commands::solve_ez_cmd(&cfg, &mut out),
        Command::Solve => commands::solve_cmd(&cfg, &mut out),
        Command::Verify => commands::verify_cmd(&cfg, &mut out),
        Command::Dp => commands::dp_cmd(&cfg, &mut out),
        Command::Oracle => commands::oracle_cmd(&cfg, &mut out),
        Command::Sweep => commands::sweep_cmd(&cfg, &raw, &mut out),
    }?;
    let files: Vec<String> = out.written().iter().map(|p| p.display().to_string()).collect();
    let summary = json!({"command": cli.command.name(), "files": files, "result": outcome.summary});
    match outcome.failed_check {
        Some(why) => {
            println!("{summary}");
            Err(CliError::Verification(why))
        }
        None => Ok(summary),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    output::init_logger(cli.verbose);
    match run(&cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            output::event(e.kind(), json!({"command": cli.command.name(), "message": e.to_string()}));
            ExitCode::from(e.code())
        }
    }
}
