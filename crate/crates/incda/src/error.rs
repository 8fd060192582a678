//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by the assimilation toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// A vector or matrix argument had the wrong size.
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    /// A Cholesky pivot was not strictly positive; the matrix is not SPD.
    #[error("matrix not positive definite: pivot {pivot} at index {index}")]
    NotPositiveDefinite { index: usize, pivot: f64 },

    /// A diagonal index fell outside `[0, dim)`.
    #[error("index {index} out of range for dimension {dim}")]
    IndexOutOfRange { index: usize, dim: usize },

    /// The innovation system `H P Hᵀ + R` could not be factorized.
    #[error("innovation covariance is numerically singular (m = {m})")]
    SingularInnovation { m: usize },

    /// Too few samples to estimate moments.
    #[error("insufficient data: need at least {needed} samples, got {got}")]
    InsufficientData { needed: usize, got: usize },

    /// An observation process ended up with zero observed entries.
    #[error("observation process has no observed entries")]
    EmptyObservation,

    /// A training loss became NaN or infinite.
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    /// Temperature embeddings require an even output dimension.
    #[error("temperature embedding dimension must be even, got {dim}")]
    OddEmbeddingDim { dim: usize },

    /// A backward pass was given a cache from a different forward pass.
    #[error("stale or mismatched cache in {context}")]
    StaleCache { context: &'static str },

    /// Configuration failed validation.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// A results directory held nothing to aggregate.
    #[error("no results found in {0}")]
    EmptyResults(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI: 2 for configuration problems,
    /// 3 for numerical failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidConfig(_) => 2,
            Error::NotPositiveDefinite { .. }
            | Error::SingularInnovation { .. }
            | Error::NonFiniteLoss { .. } => 3,
            _ => 1,
        }
    }
}
