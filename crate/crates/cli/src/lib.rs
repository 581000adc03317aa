//! Library side of the `sketchloc` command-line tool: configuration,
//! subcommand implementations and overlay rendering. `main.rs` is a thin
//! argument-parsing shell over this.

pub mod commands;
pub mod config;
pub mod render;

use std::fmt;

/// CLI failure modes mapped onto exit codes: config errors exit 2, I/O
/// errors exit 3.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Io(String),
}

impl CliError {
    pub fn config(err: impl fmt::Display) -> Self {
        CliError::Config(err.to_string())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "config error: {msg}"),
            CliError::Io(msg) => write!(f, "i/o error: {msg}"),
        }
    }
}

impl std::error::Error for CliError {}
