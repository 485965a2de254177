use thiserror::Error;

/// Errors produced anywhere in the HRTF field toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("bad magic at byte {offset}: expected {expected:?}, found {found:?}")]
    BadMagic {
        offset: u64,
        expected: &'static str,
        found: String,
    },

    #[error("unsupported version {version} at byte {offset}")]
    UnsupportedVersion { offset: u64, version: u32 },

    #[error("truncated payload at byte {offset}: needed {needed} more bytes")]
    Truncated { offset: u64, needed: usize },

    #[error("invalid archive content at byte {offset}: {msg}")]
    Corrupt { offset: u64, msg: String },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("duplicate subject-ear {dataset}/{subject}/{ear}")]
    DuplicateEar {
        dataset: String,
        subject: String,
        ear: String,
    },

    #[error("frequency {freq_hz} Hz is at or above Nyquist for sample rate {sample_rate_hz} Hz")]
    Nyquist { freq_hz: f64, sample_rate_hz: f64 },

    #[error("wrong stage: {0}")]
    Stage(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("degenerate geometry: {0}")]
    Degenerate(String),

    #[error("grid is not ring-structured; offending directions: {0}")]
    NotRingStructured(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for failures of the numerical pipeline rather than of the input data.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Numeric(_) | Error::Degenerate(_))
    }
}
