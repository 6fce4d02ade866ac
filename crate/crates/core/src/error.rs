use std::path::PathBuf;

use crate::checkpoint::Checkpoint;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot decode image {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape error: {0}")]
    Shape(String),

    /// A discriminator was handed an original image of the other modality.
    #[error("wrong modality: {0}")]
    Modality(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("generation error: {0}")]
    Generation(String),

    #[error("construction error at layer `{layer}`: {msg}")]
    Construction { layer: String, msg: String },

    #[error("checkpoint format version {found} is incompatible (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("checkpoint integrity error: {0}")]
    Integrity(String),

    #[error("training aborted at step {}: non-finite {}", .0.step, .0.component)]
    Aborted(Box<TrainingAbort>),

    #[error("tensor error: {0}")]
    Tensor(#[from] candle_core::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// State handed back when a training step produced a non-finite loss.
#[derive(Debug)]
pub struct TrainingAbort {
    pub step: u64,
    pub component: String,
    /// Parameters and optimizer state before the failing step.
    pub last_good: Checkpoint,
    pub saved_to: Option<PathBuf>,
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
