use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to decode image {}: {source}", path.display())]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("malformed JSON in {}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("missing files: {}", .0.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", "))]
    MissingFiles(Vec<PathBuf>),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("non-finite loss at epoch {epoch}, sample {sample_id}")]
    NonFiniteLoss { epoch: usize, sample_id: String },

    #[error("repetition {repetition}, fold {fold}: {source}")]
    Fold {
        repetition: usize,
        fold: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("bad parameter archive: {0}")]
    Archive(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    /// True for errors caused by the caller's input rather than by a computation.
    pub fn is_input_error(&self) -> bool {
        match self {
            Error::Io { .. }
            | Error::Image { .. }
            | Error::Json { .. }
            | Error::MissingFiles(_)
            | Error::Invalid(_)
            | Error::Archive(_) => true,
            Error::Shape(_) | Error::NonFinite(_) | Error::NonFiniteLoss { .. } => false,
            Error::Fold { source, .. } => source.is_input_error(),
        }
    }
}
