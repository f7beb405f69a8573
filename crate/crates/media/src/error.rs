use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MediaError {
    #[error("cannot probe {path}: {message}")]
    Probe { path: PathBuf, message: String },
    #[error("decode failed in {path}{}: {message}", .timestamp.map(|t| format!(" at {t:.3}s")).unwrap_or_default())]
    Decode {
        path: PathBuf,
        timestamp: Option<f64>,
        message: String,
    },
    #[error("invalid request: {0}")]
    Input(String),
    #[error("encode failed for {path}: {message}")]
    Encode { path: PathBuf, message: String },
    #[error("codec tool error: {0}")]
    Tool(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl MediaError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        MediaError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn probe(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        MediaError::Probe {
            path: path.into(),
            message: message.to_string(),
        }
    }

    pub(crate) fn decode(path: impl Into<PathBuf>, timestamp: Option<f64>, message: impl ToString) -> Self {
        MediaError::Decode {
            path: path.into(),
            timestamp,
            message: message.to_string(),
        }
    }

    pub(crate) fn encode(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        MediaError::Encode {
            path: path.into(),
            message: message.to_string(),
        }
    }

    /// Whether this is a data problem (bad container or bitstream) rather
    /// than a bad request or a tooling failure.
    pub fn is_data_error(&self) -> bool {
        matches!(self, MediaError::Probe { .. } | MediaError::Decode { .. })
    }
}
