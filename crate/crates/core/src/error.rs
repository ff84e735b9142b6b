use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("matrix is not positive semidefinite (min eigenvalue {min_eigenvalue:e}, operator norm {op_norm:e})")]
    NotPsd { min_eigenvalue: f64, op_norm: f64 },

    #[error("{what} too large: {size} exceeds the limit {limit}")]
    TooLarge {
        what: &'static str,
        size: usize,
        limit: usize,
    },

    #[error("{solver} failed: {reason}")]
    SolverFailure {
        solver: &'static str,
        reason: String,
        residual: Option<f64>,
        restart: Option<usize>,
    },

    #[error("hypothesis violated: {0}")]
    HypothesisViolated(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("cancelled")]
    Cancelled,

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
