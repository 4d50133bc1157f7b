use thiserror::Error;

/// Errors raised by fitting, residual construction, smoothing and envelope
/// construction.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("design matrix is rank deficient (rank {rank} < {columns} columns)")]
    RankDeficient { rank: usize, columns: usize },

    #[error("bad grouping: {0}")]
    BadGrouping(String),

    #[error("too few rows: need at least 3, got {0}")]
    TooFewRows(usize),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("fit did not converge within {iterations} iterations")]
    NonConvergence { iterations: usize },

    #[error("fitted means collapsed toward zero at iteration {iteration} (separation / boundary MLE)")]
    Separation { iteration: usize },

    #[error("observation {index} has leverage one")]
    LeverageOne { index: usize },

    #[error("residual kind {kind} is not available for {model} fits")]
    UnsupportedResidual { kind: &'static str, model: &'static str },

    #[error("smoother needs at least two distinct x values")]
    DegenerateX,

    #[error("evaluation range [{lo}, {hi}] lies outside fitted range [{min}, {max}]")]
    OutOfRange { lo: f64, hi: f64, min: f64, max: f64 },

    #[error("alpha={alpha} is too small for an ensemble of B={b} functions")]
    AlphaTooSmall { alpha: f64, b: usize },

    #[error("{failures} replicate refits failed, more than the {allowed} allowed")]
    TooManyRefitFailures { failures: usize, allowed: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
