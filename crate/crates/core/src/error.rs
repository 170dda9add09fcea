use thiserror::Error;

/// Errors reported by the sampling structures and their helpers.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// `alpha * W + beta` is zero, so every inclusion probability is undefined.
    #[error("degenerate query: parameterized total weight is zero")]
    DegenerateQuery,

    #[error("precondition violated: {0}")]
    PreconditionViolation(String),

    #[error("lookup table needs {needed_bits} bits, budget is {budget_bits} bits")]
    TableTooLarge { needed_bits: u128, budget_bits: u128 },

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
