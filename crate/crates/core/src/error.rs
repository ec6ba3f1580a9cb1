use thiserror::Error;

/// Errors raised anywhere in the training stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    Shape {
        context: String,
        expected: String,
        got: String,
    },

    #[error("missing parameter `{0}`")]
    MissingParam(String),

    #[error("tape already consumed by a previous backward pass")]
    TapeConsumed,

    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("non-finite loss value {0}")]
    NonFiniteLoss(f64),

    #[error("sigma must be strictly positive, got {0}")]
    NonPositiveSigma(f64),

    #[error("action {action} out of range for agent {agent} (action count {count})")]
    InvalidAction {
        agent: usize,
        action: usize,
        count: usize,
    },

    #[error("search space of size {size} exceeds the limit {limit}")]
    SpaceTooLarge { size: u128, limit: u128 },

    #[error("{0} is empty")]
    Empty(&'static str),

    #[error("environment does not have enumerable states")]
    NotEnumerable,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err(context: impl Into<String>, expected: impl ToString, got: impl ToString) -> Error {
    Error::Shape {
        context: context.into(),
        expected: expected.to_string(),
        got: got.to_string(),
    }
}
