use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("index {index} out of range 1..={len}")]
    IndexOutOfRange { index: u64, len: u64 },

    #[error("probability {0} outside (0, 1]")]
    InvalidProbability(f64),

    #[error("infeasible instance: {reason} (largest feasible eps is {max_eps})")]
    Infeasible { reason: String, max_eps: f64 },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("trace format error at line {line}: {msg}")]
    TraceFormat { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

pub(crate) fn check_probability(p: f64) -> Result<()> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::InvalidProbability(p));
    }
    Ok(())
}
