//! Error types shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, SsmError>;

#[derive(Debug, Error)]
pub enum SsmError {
    /// Tensor or matrix shapes do not line up.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// A computation produced or received a NaN/Inf.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// An argument violates a documented precondition.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// An operation was called in the wrong order.
    #[error("state error: {0}")]
    State(String),

    /// A metric is undefined on the given input (e.g. no positives).
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("parse error: {0}")]
    Parse(#[from] FormatError),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("config error: {0}")]
    Config(String),
}

/// Parse failures for the binary container formats (feature files and
/// checkpoints). Each corruption mode is a distinct variant so callers can
/// tell them apart.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum FormatError {
    #[error("bad magic bytes: expected {expected}, found {found:?}")]
    BadMagic { expected: &'static str, found: [u8; 4] },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u8),

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("header/payload mismatch: {0}")]
    HeaderMismatch(String),

    #[error("invalid header: {0}")]
    InvalidHeader(String),
}
