use thiserror::Error;

/// Errors produced by the simulator library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid cluster parameters: {0}")]
    InvalidParams(String),

    /// An aggregation rule whose resilience precondition does not hold.
    #[error("{rule} is not applicable: {reason}")]
    Inapplicable { rule: &'static str, reason: String },

    /// A computation refused because the instance exceeds a configured bound.
    #[error("instance too large: {0}")]
    TooLarge(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
