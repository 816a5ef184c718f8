use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite gradient at parameter {index} ({value})")]
    NonFiniteGradient { index: usize, value: f64 },

    #[error("non-finite loss: {0}")]
    NonFiniteLoss(String),

    #[error("missing column `{0}` in track header")]
    MissingColumn(String),

    #[error("data error at row {row}: {message}")]
    Data { row: usize, message: String },

    #[error("vehicle {0} not present in recording")]
    UnknownVehicle(i64),

    #[error("checkpoint error in {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },

    #[error("simulation fault: {0}")]
    Fault(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn checkpoint(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Checkpoint {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Process exit code used by the command-line front end
    /// (2 configuration, 3 data, 4 runtime).
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Dimension { .. } | Error::Checkpoint { .. } => 2,
            Error::MissingColumn(_) | Error::Data { .. } | Error::UnknownVehicle(_) | Error::Csv(_) => 3,
            _ => 4,
        }
    }
}
