use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: line {line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("{path}: record {index}: {message}")]
    Record {
        path: String,
        index: usize,
        message: String,
    },

    #[error("dataset contains no interactions")]
    EmptyDataset,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("temperature must be finite and at least {min}, got {value}")]
    Temperature { value: f64, min: f64 },

    #[error("user {user}: cannot draw {requested} negatives from {available} candidates")]
    NotEnoughNegatives {
        user: usize,
        requested: usize,
        available: usize,
    },

    #[error("user {user} has no positive items to sample")]
    NoPositives { user: usize },

    #[error("non-finite gradient for user {user} (tau = {tau}, scores = {scores:?})")]
    NonFiniteGradient {
        user: usize,
        tau: f64,
        scores: Vec<f64>,
    },

    #[error("no eligible users to evaluate")]
    NoEligibleUsers,

    #[error("model file: {0}")]
    ModelFormat(String),

    #[error("unsupported model file version {found} (expected {expected})")]
    ModelVersion { found: u16, expected: u16 },

    #[error("{0}")]
    Trace(String),

    #[error("all {0} runs failed")]
    AllRunsFailed(usize),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Coarse classification used by the command-line front end to pick an
    /// exit status.
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Config(_) | Error::Temperature { .. } => ErrorCategory::Config,
            Error::Io { .. }
            | Error::Parse { .. }
            | Error::Record { .. }
            | Error::EmptyDataset
            | Error::ModelFormat(_)
            | Error::ModelVersion { .. } => ErrorCategory::Input,
            _ => ErrorCategory::Runtime,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Runtime,
    Input,
}
