use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),

    /// A model or scenario field violates its schema or invariants.
    #[error("invalid field `{field}`: {reason}")]
    InvalidField { field: String, reason: String },

    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    Dimension {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("{what} is rank deficient (rank {rank} < {required})")]
    RankDeficient {
        what: &'static str,
        rank: usize,
        required: usize,
    },

    #[error("{0} is not symmetric")]
    NotSymmetric(&'static str),

    #[error("{0} is not positive definite")]
    NotPositiveDefinite(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("no consistent subset with more than {min} sensors")]
    NoConsistentSubset { min: usize },

    #[error("no stealthy attack exists for this sensor set")]
    NoStealthyAttack,

    #[error("only {found} usable seed subsets after {attempts} draws, {needed} requested")]
    InsufficientSeeds {
        found: usize,
        needed: usize,
        attempts: usize,
    },
}

impl Error {
    pub(crate) fn invalid_field(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidField {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// Configuration and input errors, as opposed to numerical failures
    /// encountered while running an otherwise valid setup.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::Parse(_)
                | Error::InvalidField { .. }
                | Error::InvalidArgument(_)
                | Error::Precondition(_)
        )
    }
}
