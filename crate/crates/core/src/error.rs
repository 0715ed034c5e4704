use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("variance at index {index} must be positive and finite, got {value}")]
    NonPositiveVariance { index: usize, value: f64 },

    #[error("invalid {name} = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("not a probability vector: {0}")]
    NotProbability(String),

    #[error("actor and prior share no action with positive mass")]
    EmptySupport,

    #[error("brute-force oracle supports at most {max} actions, got {found}")]
    TooManyActions { found: usize, max: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("linear system is singular")]
    Singular,

    #[error("structural mismatch: {0}")]
    StructuralMismatch(String),

    #[error("paired inputs are not aligned: {0}")]
    Misaligned(String),

    #[error("method `{0}` needs a critic")]
    MissingCritic(String),

    #[error("alpha {0} is not in the grid")]
    NotInGrid(f64),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn param(name: &'static str, value: f64, reason: &'static str) -> Self {
        Error::InvalidParameter {
            name,
            value,
            reason,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
