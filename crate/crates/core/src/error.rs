use std::path::PathBuf;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid disturbance parameters: {0}")]
    InvalidParams(String),

    #[error("invalid time base: {0}")]
    InvalidTimeBase(String),

    #[error("unknown disturbance class {0:?} (expected V1..V18)")]
    UnknownClass(String),

    #[error("length {0} is not a power of two >= 2")]
    NotPowerOfTwo(usize),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{0}")]
    Precondition(String),

    #[error("training diverged (non-finite loss) at epoch {epoch}, batch {batch}, lr {lr:e}")]
    Diverged { epoch: usize, batch: usize, lr: f64 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{path}: PNG decode failed: {message}")]
    PngDecode { path: PathBuf, message: String },

    #[error("{path}: PNG encode failed: {message}")]
    PngEncode { path: PathBuf, message: String },

    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}
