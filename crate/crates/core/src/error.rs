use thiserror::Error;

/// Errors produced by the wakescan library.
#[derive(Debug, Error)]
pub enum Error {
    /// The caller supplied data that violates an input contract.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Shapes of two operands do not agree.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// The solver cost blew up; usually the step is too large for the operator norm.
    #[error("solver diverged after {iterations} iterations (cost {cost:.3e}, initial {initial:.3e})")]
    Diverged {
        iterations: usize,
        cost: f64,
        initial: f64,
    },

    /// A numerical routine failed (e.g. SVD did not converge).
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// A detection stage found nothing to work with.
    #[error("no candidates in restricted region")]
    NoCandidates,

    /// Too few unmasked samples along a half-line.
    #[error("insufficient support: {0} samples")]
    InsufficientSupport(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// True for failures caused by the numerics rather than by the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Diverged { .. } | Error::Numerical(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
