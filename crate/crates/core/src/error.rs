use std::path::PathBuf;

/// Errors produced anywhere in the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("feature extraction failed: {0}")]
    Feature(String),

    #[error("{path}:{line}: {msg}")]
    Ingest {
        path: PathBuf,
        line: u64,
        msg: String,
    },

    #[error("schema error: {0}")]
    Schema(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    /// Prefix a non-finite error with the layer that produced it.
    pub(crate) fn in_layer(self, layer: &str) -> Self {
        match self {
            Error::NonFinite(op) => Error::NonFinite(format!("{layer}/{op}")),
            other => other,
        }
    }

    /// True for errors caused by bad user input or configuration, as opposed
    /// to failures while running.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::Input(_)
                | Error::Usage(_)
                | Error::Schema(_)
                | Error::Ingest { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
