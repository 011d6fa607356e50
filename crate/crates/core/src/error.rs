//! Shared error type for all core operations.

use alloc::string::String;
use core::fmt;

/// Crate-wide result alias.
pub type Result<T> = core::result::Result<T, Error>;

/// Errors raised by core operations.
///
/// Validation findings on factor graphs are *not* errors; they are returned
/// as data by [`crate::graph::FactorGraph::validate`].
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A scalar argument fell outside its valid interval.
    Domain {
        what: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },
    /// An argument violated a structural precondition.
    InvalidArgument(String),
    /// A vector or matrix had the wrong size.
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    /// A numeric computation failed (non-finite values, factorization
    /// breakdown, eigensolver non-convergence).
    Numeric(String),
    /// Training produced a non-finite loss.
    TrainingDiverged { iteration: usize },
    /// A serialized blob was malformed or truncated.
    Format(String),
    /// The model does not implement the requested capability.
    Unsupported(&'static str),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Domain {
                what,
                value,
                lo,
                hi,
            } => write!(f, "{what} = {value} outside valid interval [{lo}, {hi}]"),
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Error::Dimension {
                what,
                expected,
                got,
            } => write!(f, "dimension mismatch for {what}: expected {expected}, got {got}"),
            Error::Numeric(msg) => write!(f, "numeric failure: {msg}"),
            Error::TrainingDiverged { iteration } => {
                write!(f, "training diverged: non-finite loss at iteration {iteration}")
            }
            Error::Format(msg) => write!(f, "format error: {msg}"),
            Error::Unsupported(what) => write!(f, "unsupported capability: {what}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for Error {}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }
}
