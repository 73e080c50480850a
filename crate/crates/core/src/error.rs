use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the simulation and bounds pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("inverse power iteration did not converge after {iterations} iterations (last residual {residual:e})")]
    EigenNotConverged { iterations: usize, residual: f64 },

    #[error("principal eigenvector candidate changes sign")]
    SignIndefinite,

    #[error("linear solve failed: {0}")]
    LinearSolve(String),

    #[error("numerical overflow at t = {time}")]
    Overflow { time: f64 },

    #[error("internal consistency check failed: {0}")]
    Consistency(String),

    #[error("Cholesky factorisation of the fGn covariance failed")]
    CholeskyFailed,

    #[error("divergent exponential functional: {0}")]
    Divergent(String),

    #[error("bracket is nonpositive at t = {t}; the hitting time is {hit}")]
    BracketNonpositive { t: f64, hit: f64 },

    #[error("config key `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("i/o error at {}: {source}", path.display())]
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

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
