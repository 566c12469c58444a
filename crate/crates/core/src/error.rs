use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("header mismatch: {0}")]
    HeaderMismatch(String),

    #[error("bad cell at row {row}, column {column}: {reason}")]
    BadCell {
        row: usize,
        column: usize,
        reason: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("channel {0} is not a valid 2.4 GHz channel (1..=13)")]
    InvalidChannel(u8),

    #[error("channel {channel} spans {lo_mhz}..={hi_mhz} MHz, outside the captured band")]
    ChannelOutOfBand {
        channel: u8,
        lo_mhz: i32,
        hi_mhz: i32,
    },

    #[error("trace too short: need {needed} slots, have {available}")]
    TraceTooShort { needed: usize, available: usize },

    #[error("index {index} out of range {lo}..={hi}")]
    OutOfRange { index: usize, lo: usize, hi: usize },

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },

    #[error("label {0} out of range (-1..=8)")]
    LabelOutOfRange(i32),

    #[error("file format error: {0}")]
    Format(String),

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
