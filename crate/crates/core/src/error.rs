use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the library reports.
///
/// `kind()` gives a stable machine-readable tag used by the command-line
/// front end when it prints a single-line error.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("malformed wav at byte offset {offset}: {reason}")]
    Decode { offset: usize, reason: String },

    #[error("unsupported audio format: {0}")]
    UnsupportedFormat(String),

    #[error("clip too short: {len} samples, need at least {needed}")]
    TooShort { len: usize, needed: usize },

    #[error("invalid value for `{field}`: {reason}")]
    Validation { field: String, reason: String },

    #[error("no positive targets for any class")]
    NoPositives,

    #[error("sequence length {len} exceeds maximum {max}")]
    SequenceLength { len: usize, max: usize },

    #[error("unsupported analysis: {0}")]
    UnsupportedAnalysis(String),

    #[error("cannot align runs, epoch counts differ: {0:?}")]
    Alignment(Vec<usize>),

    #[error("non-finite loss at epoch {epoch}, batch {batch} (max |grad| = {max_grad})")]
    NonFinite { epoch: usize, batch: usize, max_grad: f64 },

    #[error("bad checkpoint: {0}")]
    Checkpoint(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn validation(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "shape",
            Error::Contract(_) => "contract",
            Error::Decode { .. } => "decode",
            Error::UnsupportedFormat(_) => "unsupported-format",
            Error::TooShort { .. } => "too-short",
            Error::Validation { .. } => "validation",
            Error::NoPositives => "no-positives",
            Error::SequenceLength { .. } => "sequence-length",
            Error::UnsupportedAnalysis(_) => "unsupported-analysis",
            Error::Alignment(_) => "alignment",
            Error::NonFinite { .. } => "non-finite",
            Error::Checkpoint(_) => "checkpoint",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}
