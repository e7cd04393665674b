use alloc::string::String;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("session has no events")]
    EmptySession,
    #[error("window must span at least one day")]
    InvalidWindow,
    #[error("vector has zero norm")]
    ZeroVector,
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    ShapeMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("cache does not match the layer it is replayed against: {0}")]
    StaleCache(&'static str),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid config field `{field}`: {reason}")]
    InvalidConfig { field: &'static str, reason: String },
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("label {label} out of range for {n_class} classes")]
    LabelOutOfRange { label: usize, n_class: usize },
    #[error("only one class present in binary labels")]
    SingleClass,
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("incompatible checkpoint: {0}")]
    Incompatible(String),
}

impl Error {
    pub(crate) fn config(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field,
            reason: reason.into(),
        }
    }

    pub(crate) fn shape(context: &'static str, expected: usize, actual: usize) -> Self {
        Error::ShapeMismatch {
            context,
            expected,
            actual,
        }
    }
}
