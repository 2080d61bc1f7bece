use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument is outside the domain where the operation is defined.
    #[error("domain error: {0}")]
    Domain(String),

    /// A numerical approximation could not reach (or certify) the requested accuracy.
    #[error("accuracy error: {0}")]
    Accuracy(String),

    /// Matrix or vector dimensions do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A function returned a non-finite value where a finite one was required.
    #[error("evaluation error: {0}")]
    Evaluation(String),

    /// A linear solver failed; `residual` is the relative residual reached.
    #[error("solver error after {iterations} iterations (relative residual {residual:.3e}): {reason}")]
    Solver {
        reason: String,
        iterations: usize,
        residual: f64,
    },

    /// Training produced a non-finite loss.
    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Divergence { epoch: usize, loss: f64 },

    /// Materializing an object would exceed the configured memory budget.
    #[error("memory budget exceeded: {needed} bytes requested, budget is {budget}")]
    Memory { needed: usize, budget: usize },

    /// Invalid experiment configuration.
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}

pub(crate) fn shape(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}
