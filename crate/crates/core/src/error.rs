use thiserror::Error;

/// Errors surfaced by every operation in the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// The instance itself is malformed (bad measure, non-total labeling, out-of-range ids).
    #[error("structural error: {0}")]
    Structural(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A precondition of the operation does not hold on this instance.
    #[error("precondition failed: {0}")]
    Precondition(String),

    /// Exact enumeration would exceed the configured cap.
    #[error("capacity exceeded: {what} has size {size}, cap is {cap}")]
    Capacity { what: String, size: usize, cap: usize },

    #[error("no feasible classifier: minimum achievable R_B is {min_rb} > mu = {mu} (raise mu, enlarge the hypothesis class, or relax the constraint)")]
    Infeasible { min_rb: f64, mu: f64 },

    #[error("no family member satisfies lr <= {mu}; minimum achievable lr is {min_lr}")]
    MarginInfeasible { min_lr: f64, mu: f64 },

    /// All perturbations vanish (zero input norm propagated through the net).
    #[error("degenerate margin: {0}")]
    Degenerate(String),

    #[error("{path}: {message}")]
    Parse { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn structural(msg: impl Into<String>) -> Error {
    Error::Structural(msg.into())
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
