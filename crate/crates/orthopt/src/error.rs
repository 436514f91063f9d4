use thiserror::Error;

/// Crate-wide error type.
///
/// Variants are grouped by failure class rather than by module: dimension and
/// finiteness violations, numerical breakdowns, domain-precondition failures,
/// and file-format problems.
#[derive(Debug, Error)]
pub enum Error {
    /// A matrix or problem was constructed with impossible dimensions.
    #[error("invalid dimensions: {0}")]
    InvalidDimensions(String),

    /// A value that must be finite was NaN or infinite.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// Two operands have incompatible shapes.
    #[error("shape mismatch: expected {expected}, got {got} in {context}")]
    ShapeMismatch {
        expected: String,
        got: String,
        context: &'static str,
    },

    /// An iterative routine ran out of its sweep/iteration budget.
    #[error("{routine} did not converge within {limit} sweeps")]
    ConvergenceFailure { routine: &'static str, limit: usize },

    /// An iteration produced NaN or infinite entries.
    #[error("numerical failure: non-finite entries at step {step}")]
    NumericalFailure { step: usize },

    /// A mathematical precondition does not hold for the given input.
    #[error("domain error: {0}")]
    Domain(String),

    /// The caller asked for something outside the API contract.
    #[error("usage error: {0}")]
    Usage(String),

    /// A file could not be parsed in the declared format.
    #[error("parse error: {0}")]
    Parse(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
