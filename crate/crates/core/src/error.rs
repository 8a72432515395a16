use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("line {line}: schema error: {msg}")]
    Schema { line: usize, msg: String },

    #[error("tape state: {0}")]
    State(String),

    /// A loss term or the sampler produced a non-finite value.
    #[error("numerical abort in {component}: {detail}")]
    Numerical { component: String, detail: String },

    #[error("non-finite gradient for parameter `{param}`")]
    NanGradient { param: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn numerical(component: &str, detail: impl Into<String>) -> Self {
        Error::Numerical {
            component: component.to_string(),
            detail: detail.into(),
        }
    }
}
