//! `dnumkit` command-line front end.
//!
//! Exit status: 0 success, 1 solver did not converge (results still
//! written), 2 bad arguments, 3 scenario validation failure.

mod args;
mod commands;
mod output;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};

/// Failure classes with their exit status.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Invalid(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

/// Outcome of a subcommand that ran to completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    NotConverged,
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(value) = std::env::var("DNUMKIT_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::Usage(format!("DNUMKIT_THREADS must be a positive integer (got `{value}`)")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Runtime(e.into()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads().and_then(|_| match cli.command {
        Command::Solve(a) => commands::solve(&a),
        Command::Mpc(a) => commands::mpc(&a),
        Command::Compare(a) => commands::compare(&a),
        Command::Validate(a) => commands::validate(&a),
        Command::Gen(a) => commands::gen(&a),
    });
    match result {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::NotConverged) => ExitCode::from(1),
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}\n\nRun `dnumkit --help` for usage.");
            ExitCode::from(2)
        }
        Err(Failure::Invalid(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(3)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
