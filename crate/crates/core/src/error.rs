use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("format error in field `{field}`: {msg}")]
    Format { field: &'static str, msg: String },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("CRS mismatch: source EPSG:{src}, destination EPSG:{dst}")]
    CrsMismatch { src: u32, dst: u32 },

    #[error("{0}")]
    Empty(String),

    #[error("no ground found")]
    NoGround,

    #[error("no temporally valid image")]
    NoValidImage,

    #[error("non-finite gradient in `{layer}`")]
    NonFiniteGradient { layer: String },

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Diverged { epoch: usize },

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn format(field: &'static str, msg: impl Into<String>) -> Self {
        Error::Format { field, msg: msg.into() }
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn file(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::File {
            path: path.into(),
            source,
        }
    }
}
