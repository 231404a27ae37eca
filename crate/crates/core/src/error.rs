//! Crate-wide error type.

use thiserror::Error;

/// Error type shared by all modules.
#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes do not conform to the operation.
    #[error("shape mismatch in `{op}`: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// Input outside an operation's mathematical domain (log of a
    /// non-positive value, division by zero, overflow to non-finite).
    #[error("domain error in `{op}`: {detail}")]
    Domain { op: &'static str, detail: String },

    /// A numerical procedure failed (ill-conditioned solve, likelihood
    /// decrease, non-finite objective).
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Invalid configuration or argument.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Malformed or inconsistent input data.
    #[error("data error: {0}")]
    Data(String),

    /// Checkpoint or output file format problem.
    #[error("format error: {0}")]
    Format(String),

    /// Underlying I/O failure.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shapes(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::ShapeMismatch {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub(crate) fn domain(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Domain {
            op,
            detail: detail.into(),
        }
    }
}
