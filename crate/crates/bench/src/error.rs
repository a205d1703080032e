use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("config line {line}, column {column}: {message}")]
    Config { line: usize, column: usize, message: String },
    #[error("config: {0}")]
    Invalid(String),
    #[error("{path}: {message}")]
    Image { path: PathBuf, message: String },
    #[error(transparent)]
    Solver(#[from] cnsprox::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("writing {path}: {message}")]
    Output { path: PathBuf, message: String },
}

impl BenchError {
    /// Process exit status: 2 for configuration and input problems, 3 when
    /// a solver diverged, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            BenchError::Config { .. } | BenchError::Invalid(_) | BenchError::Image { .. } => 2,
            BenchError::Solver(cnsprox::Error::Diverged { .. }) => 3,
            BenchError::Solver(cnsprox::Error::Series(_) | cnsprox::Error::Format(_)) => 2,
            _ => 1,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        BenchError::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, BenchError>;
