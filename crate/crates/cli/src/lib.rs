//! Experiment driver for the `herman-kluk` crate: config parsing, one
//! subcommand per experiment, and reproducible CSV/JSON output.

pub mod app;
pub mod config;
pub mod experiments;
pub mod output;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    /// Maps library errors: numerical breakdowns exit with 3, everything else
    /// is an input problem.
    pub fn from_core(e: herman_kluk::Error) -> Self {
        use herman_kluk::Error as E;
        match e {
            E::WeightOverflow { .. } | E::Caustic { .. } | E::NonFiniteForce { .. } => {
                CliError::Numerical(e.to_string())
            }
            other => CliError::Config(other.to_string()),
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io(_) => 1,
        }
    }
}

impl std::fmt::Display for output::Cell {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            output::Cell::Float(v) => f.write_str(&output::format_float(*v)),
            output::Cell::Int(v) => write!(f, "{v}"),
            output::Cell::Text(s) => f.write_str(s),
            output::Cell::Empty => Ok(()),
        }
    }
}
