//! Command-line front end: run configuration files, subcommands and the
//! mapping from errors to exit codes.

pub mod commands;
pub mod config;

use std::fmt;

pub use commands::{run, Cli};
pub use config::RunConfig;

/// Exit status of a successful run.
pub const EXIT_OK: i32 = 0;
/// Bad arguments, configuration or key file.
pub const EXIT_USAGE: i32 = 2;
/// File system or image decoding failure.
pub const EXIT_IO: i32 = 3;
/// Mismatched keys, shapes or pixel ranges.
pub const EXIT_PROTOCOL: i32 = 4;
/// The search diverged.
pub const EXIT_NUMERICAL: i32 = 5;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(fnsteg::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use fnsteg::Error as E;
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Core(e) => match e.root() {
                E::Config(_) | E::KeyFile(_) => EXIT_USAGE,
                E::Io(_) | E::Image(_) => EXIT_IO,
                E::Shape(_) | E::Range(_) | E::Protocol(_) => EXIT_PROTOCOL,
                E::Numerical { .. } => EXIT_NUMERICAL,
                E::InStage { .. } => unreachable!("root strips stage wrappers"),
            },
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<fnsteg::Error> for CliError {
    fn from(e: fnsteg::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Core(e.into())
    }
}
