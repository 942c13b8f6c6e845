use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid hyperparameters, dimensions or flags.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid filter: {0}")]
    InvalidFilter(String),

    /// A loss, residual or parameter left the finite range.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// Least-squares channel fit with a constant input channel.
    #[error("degenerate channel {channel}: zero variance in network output")]
    DegenerateChannel { channel: usize },

    #[error("unsupported image: {0}")]
    Unsupported(String),

    #[error("decode error: {0}")]
    Decode(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
