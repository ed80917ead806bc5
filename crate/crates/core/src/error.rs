use thiserror::Error;

/// Errors raised by the numerical and Monte Carlo routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// An argument lies outside the mathematical domain of the routine.
    #[error("domain error: {0}")]
    Domain(String),

    /// An argument violates a structural precondition (sizes, ordering, counts).
    #[error("invalid argument: {0}")]
    Argument(String),

    /// A kernel produced a non-finite sample at a quadrature node pair.
    #[error("kernel evaluation failed at (x = {x}, y = {y}): {reason}")]
    Evaluation { x: f64, y: f64, reason: String },

    /// A dense linear solve failed.
    #[error("linear solver failure: {0}")]
    Solver(String),

    /// An operation was requested on an object lacking the required state.
    #[error("invalid state: {0}")]
    State(String),

    /// An estimator refused to run on inputs it cannot handle reliably.
    #[error("unreliable input: {0}")]
    Unreliable(String),
}

pub type Result<T> = std::result::Result<T, Error>;
