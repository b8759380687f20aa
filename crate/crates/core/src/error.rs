use thiserror::Error;

/// Crate-wide error type. Variants mirror the failure classes the CLI maps
/// to exit codes: configuration-class errors exit 2, data/format-class exit 3.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Input data is unusable (NaN/Inf entries, empty blocks, ...).
    #[error("data error: {0}")]
    Data(String),

    /// Matrix/vector dimensions do not conform.
    #[error("shape error: {0}")]
    Shape(String),

    /// An operation was called in a state that forbids it.
    #[error("state error: {0}")]
    State(String),

    /// Invalid configuration (bad block size, mismatched codebook, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// Stored bytes are internally inconsistent.
    #[error("corruption error: {0}")]
    Corruption(String),

    /// A serialized payload does not match its declared format.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    /// Integer overflow in size arithmetic.
    #[error("range error: {0}")]
    Range(String),

    /// A statistic is undefined on the sample (zero variance, constant data).
    #[error("degenerate data: {0}")]
    DegenerateData(String),

    /// Sample too small for the requested statistic.
    #[error("sample size error: {0}")]
    SampleSize(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for CLI reporting: 2 for configuration errors,
    /// 3 for data/format errors.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Domain(_)
            | Error::Config(_)
            | Error::State(_)
            | Error::Range(_)
            | Error::SampleSize(_) => 2,
            Error::Data(_)
            | Error::Shape(_)
            | Error::Corruption(_)
            | Error::Format { .. }
            | Error::DegenerateData(_)
            | Error::Io(_) => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
