use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain an operation is defined on.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// `x_t`, `x0` and `eps` do not satisfy the corruption identity.
    #[error("inconsistent corruption triple: residual {residual:.3e} exceeds {tolerance:.1e}")]
    Consistency { residual: f64, tolerance: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("unsupported: {0}")]
    Unsupported(String),

    /// Caller broke an API contract (e.g. asked for the gradient of a non-scalar).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("training diverged at iteration {iteration}: {what} = {value}")]
    Divergence {
        iteration: usize,
        what: String,
        value: f64,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
