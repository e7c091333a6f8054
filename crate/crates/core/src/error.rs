use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the cleaning and inference pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("trace has {usable} usable rows, at least 3 are required")]
    EmptyTrace { usable: usize },

    #[error("time column is not strictly increasing at line {line}")]
    NonMonotoneTime { line: u64 },

    #[error("concentration must be non-negative, got {0}")]
    NegativeConcentration(f64),

    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },

    #[error("channel count mismatch: {left} vs {right}")]
    ChannelMismatch { left: usize, right: usize },

    #[error("cluster is empty")]
    EmptyCluster,

    #[error("baseline buffer summary is missing")]
    MissingBaseline,

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite density: {0}")]
    NonFiniteDensity(String),

    #[error("no finite log-posterior starting state found after {attempts} attempts")]
    InitializationFailure { attempts: usize },

    #[error("need at least {needed} chains, got {got}")]
    TooFewChains { needed: usize, got: usize },

    #[error("need at least {needed} draws, got {got}")]
    TooFewDraws { needed: usize, got: usize },

    #[error("non-finite deviance")]
    NonFiniteDeviance,

    #[error("no completed repetitions")]
    NoCompletedReps,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
