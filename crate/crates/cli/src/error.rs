use std::path::PathBuf;

use nmci::FusionError;
use nmci_sim::SimError;
use thiserror::Error;

/// Process exit codes.
pub mod exit {
    pub const SUCCESS: i32 = 0;
    /// Invalid arguments, configuration or input files.
    pub const CONFIG: i32 = 2;
    /// Fusion, solver or filter failure.
    pub const NUMERIC: i32 = 3;
    /// Reading or writing files failed.
    pub const IO: i32 = 4;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => exit::CONFIG,
            CliError::Numeric(_) => exit::NUMERIC,
            CliError::Io { .. } => exit::IO,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }
}

impl From<FusionError> for CliError {
    fn from(e: FusionError) -> Self {
        match e {
            FusionError::Singular(_)
            | FusionError::Solver(_)
            | FusionError::RetryBudgetExhausted { .. }
            | FusionError::NotBlockDiagonal { .. } => CliError::Numeric(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Config(_) | SimError::Toml(_) => CliError::Config(e.to_string()),
            SimError::Core(inner) => inner.into(),
            SimError::Fusion { .. } | SimError::Filter { .. } => CliError::Numeric(e.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
