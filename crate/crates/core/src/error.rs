use thiserror::Error;

/// Errors produced by every module of the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("duplicate id {0:?}")]
    DuplicateId(String),

    #[error("non-finite value in row {row}, column {column}")]
    NonFinite { row: usize, column: usize },

    #[error("invalid bank: {0}")]
    InvalidBank(String),

    #[error("bad magic at byte 0: expected \"EBNK\"")]
    BadMagic,

    #[error("unsupported version {version} at byte 4")]
    UnsupportedVersion { version: u8 },

    #[error("truncated file at byte {offset}: {what}")]
    Truncated { offset: usize, what: &'static str },

    #[error("malformed header at byte {offset}: {message}")]
    Header { offset: usize, message: String },

    #[error("payload length mismatch at byte {offset}: expected {expected} bytes, found {found}")]
    PayloadLength {
        offset: usize,
        expected: usize,
        found: usize,
    },

    #[error("non-finite payload value at byte {offset}")]
    NonFinitePayload { offset: usize },

    #[error("row {row}: {message}")]
    Row { row: usize, message: String },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite intermediate state at timestep {timestep}")]
    NonFiniteState { timestep: usize },

    #[error("denoiser protocol: {0}")]
    Protocol(String),

    #[error("image: {0}")]
    Image(String),

    #[error("{0}")]
    InvalidInput(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(message: impl Into<String>) -> Self {
        Error::InvalidInput(message.into())
    }

    pub(crate) fn io_at(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> Self + '_ {
        move |e| {
            Error::Io(std::io::Error::new(
                e.kind(),
                format!("{}: {e}", path.display()),
            ))
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
