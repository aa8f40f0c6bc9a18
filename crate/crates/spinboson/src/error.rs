//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A scalar input or intermediate value was NaN or infinite.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// Mismatched dimensions between states, operators, or bases.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// Requested moment order above the supported maximum.
    #[error("moment order {requested} exceeds supported maximum {max}")]
    UnsupportedOrder { requested: usize, max: usize },

    /// A dense object would exceed its configured memory budget.
    #[error("dense dimension {dim} exceeds budget {budget} ({what})")]
    BudgetExceeded {
        what: String,
        dim: usize,
        budget: usize,
    },

    /// Invalid parameter value (range or consistency violation).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Linear-algebra failure (factorization, SVD, pseudo-inverse).
    #[error("linear algebra: {0}")]
    Linalg(String),

    /// Integration failure (non-finite derivative, step underflow, ...).
    #[error("integration: {0}")]
    Integration(String),

    /// Jump handling failure (no applicable channel, vanishing state, ...).
    #[error("jump: {0}")]
    Jump(String),

    /// Too few successful trajectories to aggregate.
    #[error("ensemble: {0}")]
    Ensemble(String),

    /// Configuration parse or validation failure.
    #[error("config: {0}")]
    Config(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<ndarray_linalg::error::LinalgError> for Error {
    fn from(e: ndarray_linalg::error::LinalgError) -> Self {
        Error::Linalg(e.to_string())
    }
}
