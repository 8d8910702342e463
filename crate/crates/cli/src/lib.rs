//! Command-line harness for GtR sampling plans and the Gaussian testbed.
//!
//! Exit codes: 0 on success, 2 for invalid flags, configs or inputs, 1 for
//! internal failures. Primary outputs go to `--output` (written atomically)
//! or stdout.

pub mod commands;
pub mod config;
pub mod experiment;
pub mod output;

use std::ffi::OsString;
use std::fmt::Display;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Grid(#[from] gtr_core::grid::GridError),
    #[error(transparent)]
    Plan(#[from] gtr_core::plan::PlanError),
    #[error(transparent)]
    Fts(#[from] gtr_core::fts::FtsError),
    #[error(transparent)]
    Gmrf(#[from] gtr_core::gmrf::GmrfError),
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    pub fn internal(e: impl Display) -> Self {
        CliError::Internal(e.to_string())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Internal(_) => 1,
            _ => 2,
        }
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    use clap::Parser;

    let cli = match commands::Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match commands::execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
