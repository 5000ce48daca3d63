use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    /// An API was used out of order, e.g. `backward` without a matching `forward`.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid config field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("attention normalization is degenerate: |sum of scores| = {0:e} < 1e-8")]
    DegenerateNormalization(f64),

    #[error("bad checkpoint magic")]
    BadMagic,

    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u16),

    #[error("checkpoint truncated while reading {0}")]
    Truncated(String),

    #[error("checkpoint parameter `{name}` has shape {found:?}, model expects {expected:?}")]
    ShapeDisagreement {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("checkpoint format error: {0}")]
    Format(String),

    #[error("{path}: {reason}")]
    Data { path: PathBuf, reason: String },

    #[error("epoch {epoch}: {source}")]
    Epoch {
        epoch: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn config(field: &str, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.to_string(),
            reason: reason.into(),
        }
    }

    pub(crate) fn data(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Data {
            path: path.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Strips any `Epoch` wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Epoch { source, .. } => source.root(),
            e => e,
        }
    }

    /// True for failures caused by the input dataset or files (bad PPM, missing frames, IO).
    pub fn is_data_error(&self) -> bool {
        matches!(
            self.root(),
            Error::Data { .. } | Error::Io { .. } | Error::Csv(_)
        )
    }

    pub fn is_numeric_error(&self) -> bool {
        matches!(
            self.root(),
            Error::Numeric(_) | Error::DegenerateNormalization(_)
        )
    }
}
