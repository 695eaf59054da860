use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum VsrError {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("incompatible weights: {0}")]
    Incompatible(String),

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error at {path}: {message}")]
    Image { path: PathBuf, message: String },
}

impl VsrError {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        VsrError::Dimension(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        VsrError::Io {
            path: path.into(),
            source,
        }
    }

    /// Short stable identifier used by the CLI's error records.
    pub fn kind(&self) -> &'static str {
        match self {
            VsrError::Dimension(_) => "dimension",
            VsrError::Usage(_) => "usage",
            VsrError::NonFinite(_) => "non_finite",
            VsrError::Config(_) => "config",
            VsrError::Format(_) => "format",
            VsrError::Incompatible(_) => "incompatible",
            VsrError::Io { .. } => "io",
            VsrError::Image { .. } => "image",
        }
    }
}

pub type Result<T, E = VsrError> = std::result::Result<T, E>;
