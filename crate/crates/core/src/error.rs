use thiserror::Error;

/// Errors produced by corpus ingestion, model files and evaluation.
///
/// Shape violations inside the tensor graph are programmer errors and panic
/// instead, with a message naming the op and the offending shapes.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("{path}:{line}: {msg}")]
    Format {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("{0}")]
    Data(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CoreError {
    pub fn format(path: impl Into<String>, line: usize, msg: impl Into<String>) -> Self {
        CoreError::Format {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        CoreError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, CoreError>;
