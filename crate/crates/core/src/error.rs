use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("packed parameter length {0} is not of the form 1+n+n^2")]
    InvalidPackedLength(usize),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    /// A modelling assumption (graph, cost structure) does not hold.
    #[error("{assumption} violated: {detail}")]
    Assumption {
        assumption: &'static str,
        detail: String,
    },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("gradient-tracking conservation violated at round {round}: residual {residual:e}")]
    Conservation { round: u64, residual: f64 },

    #[error("divergence at round {round}: agent {agent} has |x| = {norm:e}")]
    Divergence { round: u64, agent: usize, norm: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(expected: usize, found: usize) -> Self {
        Error::DimensionMismatch { expected, found }
    }
}
