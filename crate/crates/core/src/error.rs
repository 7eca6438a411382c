use thiserror::Error;

/// Errors raised anywhere in the simulator.
///
/// Pairing-level failures (key agreement, interlock ordering, framing) are
/// also recorded as [`crate::protocol::FailedCheck`] on a rejected outcome;
/// this enum carries the diagnostic.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("range error: {0}")]
    Range(String),

    #[error("configuration error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("key agreement failed: {0}")]
    KeyAgreement(String),

    #[error("interlock ordering violation: {0}")]
    InterlockOrdering(String),

    #[error("framing error: {0}")]
    Framing(String),

    #[error("record format error: {0}")]
    RecordFormat(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("input error: {0}")]
    Input(String),
}

impl Error {
    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
