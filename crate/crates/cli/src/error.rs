use std::path::Path;

use sls_bayes::Error;
use thiserror::Error as ThisError;

#[derive(Debug, ThisError)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{context}: {source}")]
    Core {
        context: String,
        #[source]
        source: Error,
    },

    #[error("{0}")]
    NotConverged(String),
}

impl CliError {
    /// 2 usage or configuration, 3 numerical failure, 4 convergence gate.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::NotConverged(_) => 4,
            CliError::Core { source, .. } => match source {
                Error::InitializationFailure { .. }
                | Error::NonFiniteDensity(_)
                | Error::NonFiniteDeviance
                | Error::NoCompletedReps
                | Error::EmptyCluster
                | Error::MissingBaseline
                | Error::TooFewPoints { .. } => 3,
                _ => 2,
            },
        }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Usage(format!("{}: {e}", path.display()))
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub(crate) trait Context<T> {
    fn ctx(self, context: impl FnOnce() -> String) -> CliResult<T>;
}

impl<T> Context<T> for sls_bayes::Result<T> {
    fn ctx(self, context: impl FnOnce() -> String) -> CliResult<T> {
        self.map_err(|source| CliError::Core {
            context: context(),
            source,
        })
    }
}
