use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error(
        "M = {m} does not divide K = {k}; partition-based rates need B = K/M to be an integer"
    )]
    NotDivisible { k: usize, m: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("too large to enumerate: {count} elements exceeds the cap of {cap}")]
    TooLarge { count: String, cap: u64 },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error(
        "solver did not converge after {iterations} iterations (max violation {max_violation:.3e})"
    )]
    NoConvergence {
        iterations: usize,
        max_violation: f64,
    },

    #[error("io error: {0}")]
    Io(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}
