use thiserror::Error;

/// Errors produced by topology construction, experiments and I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    Parameter { name: &'static str, reason: String },

    #[error(
        "construction failed after {attempts} attempts: best consensus factor {best_factor:.6} > target {target:.6}"
    )]
    ConstructionFailed {
        attempts: usize,
        target: f64,
        best_factor: f64,
        best_basis: Vec<usize>,
    },

    #[error("non-finite value at iteration {iteration}: {what}")]
    NonFinite { iteration: usize, what: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("malformed input: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::Parameter {
            name,
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
