//! `oyldp`: rate functions, Monte Carlo estimates and verification suites
//! for the O'Connell-Yor polymer.
//!
//! Exit status: 0 success, 1 failed check, 2 configuration error,
//! 3 numerical domain error, 4 warning escalated by `--strict`.

mod commands;
mod config;

use std::io::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use oyldp::Error;

use config::{Command, Settings};

#[derive(Debug, Parser)]
#[command(name = "oyldp", version, about = "Large deviations of the O'Connell-Yor polymer")]
struct Cli {
    /// JSON file with default settings; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Option<Sub>,
}

#[derive(Debug, Subcommand)]
enum Sub {
    /// Tabulate an analytic curve.
    Compute(Settings),
    /// Run a Monte Carlo estimator.
    Simulate(Settings),
    /// Run a verification suite.
    Verify(Settings),
}

/// An error with its exit status.
#[derive(Debug)]
pub struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    pub fn config(message: impl Into<String>) -> Self {
        Failure {
            code: 2,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::InvalidGrid(_)
            | Error::InvalidDimension(_)
            | Error::OffGrid { .. }
            | Error::IndexRange(_)
            | Error::Precondition(_)
            | Error::Format(_) => 2,
            _ => 3,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

/// What a command produced.
pub struct Output {
    pub text: String,
    pub warnings: Vec<String>,
    /// Set when a verification check failed.
    pub failed: bool,
    /// Human-readable digest for standard error.
    pub summary: Option<String>,
}

impl Output {
    pub fn data(text: String) -> Self {
        Output {
            text,
            warnings: Vec::new(),
            failed: false,
            summary: None,
        }
    }
}

fn run(cli: Cli) -> Result<u8, Failure> {
    let file = match &cli.config {
        Some(p) => config::load_file(p)?,
        None => config::FileConfig::default(),
    };
    let (command, flags) = match cli.command {
        Some(Sub::Compute(s)) => (Command::Compute, s),
        Some(Sub::Simulate(s)) => (Command::Simulate, s),
        Some(Sub::Verify(s)) => (Command::Verify, s),
        None => (
            file.command
                .ok_or_else(|| Failure::config("command: give compute, simulate or verify, or set it in --config"))?,
            Settings::default(),
        ),
    };
    let mut settings = flags.over(file.settings);
    settings.seed = config::resolve_seed(&settings)?;
    let mut out = match command {
        Command::Compute => commands::compute(&settings)?,
        Command::Simulate => commands::simulate(&settings)?,
        Command::Verify => commands::verify(&settings)?,
    };
    if !out.text.ends_with('\n') {
        out.text.push('\n');
    }
    match &settings.out {
        Some(path) => std::fs::write(path, &out.text)
            .map_err(|e| Failure::config(format!("--out: cannot write {}: {e}", path.display())))?,
        None => {
            let _ = std::io::stdout().write_all(out.text.as_bytes());
        }
    }
    // a report table already lists its warnings
    match &out.summary {
        Some(s) => eprint!("{s}"),
        None => out.warnings.iter().for_each(|w| eprintln!("warning: {w}")),
    }
    Ok(if out.failed {
        1
    } else if settings.strict && !out.warnings.is_empty() {
        eprintln!("error: warnings escalated by --strict");
        4
    } else {
        0
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
