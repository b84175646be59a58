use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: String, got: String },

    #[error("insufficient history: need {needed} lagged slices, have {available}")]
    InsufficientHistory { needed: usize, available: usize },

    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),

    #[error("model family {family} requires a feature graph")]
    MissingFeatureGraph { family: String },

    #[error("model family mismatch: expected {expected}, got {got}")]
    FamilyMismatch { expected: String, got: String },

    #[error("degenerate reference signal: zero energy in the actual values")]
    DegenerateReference,

    #[error("non-finite objective encountered ({context})")]
    NonFinite { context: String },

    #[error("unstable process: companion spectral radius {radius:.6} >= 1")]
    Unstable { radius: f64 },

    #[error("window plan overflows the series: {reason} (max feasible iterations: {max_iterations})")]
    PlanOverflow { reason: String, max_iterations: usize },

    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("malformed record in {} at line {line}: {reason}", path.display())]
    Malformed {
        path: PathBuf,
        line: u64,
        reason: String,
    },

    #[error("time range not covered: {0}")]
    RangeNotCovered(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn dims(expected: impl ToString, got: impl ToString) -> Self {
        Error::DimensionMismatch {
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }
}
