use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("non-finite value {value} at index {index} in {what}")]
    NonFinite {
        what: &'static str,
        index: usize,
        value: f64,
    },

    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid block layout: {0}")]
    Layout(String),

    #[error("matrix is not positive definite (pivot {pivot} at column {column})")]
    NotPositiveDefinite { column: usize, pivot: f64 },

    #[error("malformed IDX data at byte offset {offset}: {reason}")]
    Idx { offset: usize, reason: String },

    #[error("{path}: {message}")]
    Io { path: String, message: String },

    #[error("forward cache is stale: {0}")]
    StaleCache(String),

    #[error("step {step} produced a non-finite parameter at coordinate {index}")]
    Diverged { step: u64, index: usize },

    #[error("tracker misuse: {0}")]
    Tracker(String),

    #[error("solver did not converge: {0}")]
    NoConvergence(String),
}

pub(crate) fn ensure_finite(what: &'static str, data: &[f64]) -> Result<()> {
    match data.iter().position(|v| !v.is_finite()) {
        None => Ok(()),
        Some(index) => Err(Error::NonFinite {
            what,
            index,
            value: data[index],
        }),
    }
}
