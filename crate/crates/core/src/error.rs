use alloc::string::String;

/// Errors raised by the numerical kernel.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// An archive or domain-type invariant does not hold. `field` names the
    /// violated invariant (e.g. "records length", "tensor byte length").
    #[error("validation error ({field}): {message}")]
    Validation { field: String, message: String },

    #[error("unsupported dtype {0:?}; only \"f32le\" is accepted")]
    UnsupportedDtype(String),

    #[error("unsupported schema version {found} (reader supports {supported})")]
    SchemaVersion { found: u32, supported: u32 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("index {index} out of range (limit {limit})")]
    OutOfRange { index: usize, limit: usize },

    /// A direction could not be formed because the defining difference or
    /// mean vanished.
    #[error("degenerate direction: {0}")]
    DegenerateDirection(&'static str),

    #[error("insufficient data: {0}")]
    InsufficientData(&'static str),

    #[error("single class present; both classes are required")]
    SingleClass,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T> = core::result::Result<T, Error>;

impl Error {
    pub(crate) fn validation(field: &str, message: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn invalid(message: impl Into<String>) -> Self {
        Error::InvalidArgument(message.into())
    }
}
