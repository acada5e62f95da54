use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// A value fell outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Caller broke an API contract (shape mismatch, incompatible layers, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A fitting run failed (divergence, non-finite gradients, degenerate samples).
    #[error("fit error: {0}")]
    Fit(String),

    /// A training run failed; carries the epoch and batch that produced it.
    #[error("training error at epoch {epoch}, batch {batch}: {msg}")]
    Train {
        epoch: usize,
        batch: usize,
        msg: String,
    },

    /// A brute-force oracle could not evaluate its target.
    #[error("oracle error: {0}")]
    Oracle(String),

    /// Malformed input file; carries a line number where applicable.
    #[error("parse error: {0}")]
    Parse(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
