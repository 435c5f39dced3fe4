use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Error kinds, one per module boundary. The `Display` form is a single line
/// prefixed with the module that raised it.
#[derive(Debug, Error)]
pub enum Error {
    #[error("config: {0}")]
    Config(String),

    #[error("model: shape mismatch: {0}")]
    Shape(String),

    #[error("model: argument: {0}")]
    Argument(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("augmentation: {0}")]
    Augmentation(String),

    #[error("data: ingest{}: {message}", row.map(|r| format!(" (row {r})")).unwrap_or_default())]
    Ingest { row: Option<usize>, message: String },

    #[error("evaluation: {0}")]
    Evaluation(String),

    #[error(
        "training: non-finite loss at epoch {epoch}, batch {batch} (lr {learning_rate}): {detail}"
    )]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        learning_rate: f64,
        detail: String,
    },

    #[error("io: {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn ingest(row: Option<usize>, message: impl Into<String>) -> Self {
        Error::Ingest {
            row,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by invalid user input rather than a runtime failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::Shape(_)
                | Error::Argument(_)
                | Error::Augmentation(_)
                | Error::Ingest { .. }
                | Error::Evaluation(_)
        )
    }
}
