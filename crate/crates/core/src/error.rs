use std::fmt;

/// Errors produced anywhere in the attribution pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("input shape mismatch: expected {expected}, got {got:?}")]
    InputShape { expected: String, got: Vec<usize> },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid parameter `{name}`: {reason}")]
    Parameter { name: &'static str, reason: String },

    #[error("power iteration did not converge after {iterations} iterations (last estimate {estimate})")]
    Convergence { iterations: usize, estimate: f64 },

    #[error("bag has no instances")]
    EmptyBag,

    #[error("reference pool: {0}")]
    Pool(String),

    #[error("non-finite gradient at alpha = {alpha}")]
    Numeric { alpha: f64 },

    #[error("format error at byte {offset}: {reason}")]
    Format { offset: usize, reason: String },

    #[error("checksum mismatch at byte {offset}: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { offset: usize, stored: u32, computed: u32 },

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("evaluation: {0}")]
    Evaluation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl fmt::Display) -> Self {
        Error::Parameter {
            name,
            reason: reason.to_string(),
        }
    }

    pub(crate) fn format(offset: usize, reason: impl fmt::Display) -> Self {
        Error::Format {
            offset,
            reason: reason.to_string(),
        }
    }

    pub(crate) fn shape(expected: impl fmt::Display, got: &[usize]) -> Self {
        Error::InputShape {
            expected: expected.to_string(),
            got: got.to_vec(),
        }
    }
}
