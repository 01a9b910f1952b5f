use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor extents are incompatible with the requested operation.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// A numeric parameter is outside its valid domain.
    #[error("parameter error: {0}")]
    Parameter(String),

    /// Configuration could not be parsed or is inconsistent.
    #[error("config error: {0}")]
    Config(String),

    /// Input data is unusable (undersized image, bad manifest entry, ...).
    #[error("data error: {0}")]
    Data(String),

    /// A loss or activation became NaN/Inf.
    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

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
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
