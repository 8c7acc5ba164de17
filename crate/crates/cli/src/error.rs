use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn config(field: impl Into<String>, message: impl ToString) -> Self {
        CliError::Config { field: field.into(), message: message.to_string() }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }

    /// Process exit status: 2 for bad input, 3 for numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => 2,
            CliError::Solver(_) => 3,
            CliError::Io { .. } => 1,
        }
    }
}

impl From<rmt_core::SolverError> for CliError {
    fn from(e: rmt_core::SolverError) -> Self {
        CliError::Solver(e.to_string())
    }
}

impl From<rmt_core::SpectralError> for CliError {
    fn from(e: rmt_core::SpectralError) -> Self {
        CliError::Solver(e.to_string())
    }
}

impl From<rmt_core::BogovskiiError> for CliError {
    fn from(e: rmt_core::BogovskiiError) -> Self {
        match e {
            rmt_core::BogovskiiError::Solver(s) => CliError::Solver(s.to_string()),
            other => CliError::Solver(other.to_string()),
        }
    }
}
