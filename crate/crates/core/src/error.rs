use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Two operands disagree on dimensions, or a dimension violates a divisibility rule.
    #[error("shape error: {0}")]
    Shape(String),

    /// A value is outside the range its type declares.
    #[error("range error: {0}")]
    Range(String),

    /// A caller-supplied argument violates a precondition.
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image codec error on {}: {source}", path.display())]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    /// A per-sample failure while streaming a dataset.
    #[error("sample {source_id}: {source}")]
    Sample {
        source_id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("config fingerprint mismatch: weights {found}, model {expected}")]
    Fingerprint { expected: String, found: String },

    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),

    #[error("loss diverged at step {step}: {loss}")]
    Divergence { step: usize, loss: f64 },

    #[error("mask error: {pixels} pixels {problem}")]
    Mask {
        pixels: usize,
        problem: &'static str,
    },

    #[error("invalid survey record for participant {participant}: {reason}")]
    Survey { participant: String, reason: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short stable identifier for the error class.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape(_) => "shape",
            Error::Range(_) => "range",
            Error::Argument(_) => "argument",
            Error::Io { .. } => "io",
            Error::Image { .. } => "image",
            Error::Sample { source, .. } => source.kind(),
            Error::Fingerprint { .. } => "fingerprint",
            Error::Corrupt(_) => "corrupt",
            Error::Divergence { .. } => "divergence",
            Error::Mask { .. } => "mask",
            Error::Survey { .. } => "survey",
        }
    }
}
