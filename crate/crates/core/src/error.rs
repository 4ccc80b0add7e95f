use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("input error: {0}")]
    Input(String),

    #[error("format error in {path}: {message} (byte offset {offset})")]
    Format {
        path: PathBuf,
        offset: usize,
        message: String,
    },

    #[error("consistency error: {0}")]
    Consistency(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status for this error: 3 when training diverged, 2 for
    /// everything caused by bad input.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Diverged { .. } => 3,
            _ => 2,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
