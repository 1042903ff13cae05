//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid embedding dimension m={m}, need m >= 2")]
    InvalidDimension { m: usize },

    #[error("descriptors cannot be paired: {reason}")]
    PairMismatch { reason: String },

    #[error("point outside the manifold domain: coordinate {index} = {value} not in [{lo}, {hi}]")]
    OutOfDomain {
        index: usize,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },

    #[error("option index {index} out of range for {len} options")]
    InvalidIndex { index: usize, len: usize },

    #[error("m={m} exceeds the dense-Hessian cap of {max}")]
    CapacityExceeded { m: usize, max: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("scenario generation failed: {0}")]
    Generation(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("length mismatch: {what} has {got} entries, expected {expected}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI: 2 config, 3 data, 4 capacity, 1 everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidParameter(_) | Error::InvalidDimension { .. } => 2,
            Error::Parse { .. }
            | Error::Generation(_)
            | Error::EmptyInput(_)
            | Error::InvalidDistribution(_)
            | Error::LengthMismatch { .. }
            | Error::Io(_)
            | Error::Json(_) => 3,
            Error::CapacityExceeded { .. } => 4,
            _ => 1,
        }
    }
}
