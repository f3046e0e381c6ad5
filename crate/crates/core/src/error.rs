use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error in `{field}`: {message}")]
    Parse { field: String, message: String },

    #[error("validation failed:\n  - {}", .0.join("\n  - "))]
    Validation(Vec<String>),

    #[error("selection error: {0}")]
    Selection(String),

    #[error("insufficient samples: need at least {needed}, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("constraint region too small: accepted {accepted} of {attempts} draws (acceptance rate {rate:.2e})")]
    ConstraintRegionTooSmall {
        accepted: usize,
        attempts: usize,
        rate: f64,
    },

    #[error("infeasible constraint system: {0}")]
    Infeasible(String),

    #[error("non-finite value in design matrix at row {row}, column {column}")]
    NonFinite { row: usize, column: usize },

    #[error("coordinate descent did not converge after {sweeps} sweeps (last max change {change:.3e})")]
    NonConvergence { sweeps: usize, change: f64 },

    #[error("ill-conditioned kernel: Cholesky failed at jitter {jitter:.1e}")]
    IllConditioned { jitter: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("oracle infeasible: {0}")]
    OracleInfeasible(String),

    #[error("template error: {0}")]
    Template(String),

    #[error("aborted after {count} consecutive evaluation failures; last: {last}")]
    TooManyFailures { count: usize, last: String },

    #[error("{path}:{line}: malformed record: {message}")]
    MalformedRecord {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

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
}
