use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("sampling too coarse: {0}")]
    SamplingTooCoarse(String),

    #[error("empty distribution: {0}")]
    EmptyDistribution(String),

    #[error("insufficient samples: need {needed}, have {available}")]
    InsufficientSamples { needed: usize, available: usize },

    #[error(transparent)]
    Format(#[from] FormatError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter { name, reason: reason.into() }
    }
}

/// Errors raised while decoding the binary tensor and frame formats.
#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic at byte 0: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported version {found} at byte {offset}")]
    UnsupportedVersion { found: u8, offset: u64 },

    #[error("unknown dtype {found} at byte {offset}")]
    UnknownDtype { found: u8, offset: u64 },

    #[error("dtype mismatch at byte {offset}: expected {expected}, found {found}")]
    DtypeMismatch { expected: &'static str, found: &'static str, offset: u64 },

    #[error("truncated data at byte {offset}: expected {expected} bytes, got {actual}")]
    Truncated { expected: u64, actual: u64, offset: u64 },

    #[error("invalid header at byte {offset}: {reason}")]
    InvalidHeader { reason: String, offset: u64 },

    #[error("invalid payload at byte {offset}: {reason}")]
    InvalidPayload { reason: String, offset: u64 },
}
