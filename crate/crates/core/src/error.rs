use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error in {op}: {msg}")]
    Shape { op: &'static str, msg: String },

    #[error("domain error in {op}: invalid input {value} at flat index {index}")]
    Domain {
        op: &'static str,
        index: usize,
        value: f64,
    },

    #[error("config error at `{key}`: {msg}")]
    Config { key: String, msg: String },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("checkpoint format error at byte {offset}: {msg}")]
    Format { offset: usize, msg: String },

    #[error("unknown parameter `{0}`")]
    Name(String),

    #[error("run diverged at step {step} (last finite step: {last_finite:?})")]
    Diverged {
        step: usize,
        last_finite: Option<usize>,
    },

    #[error("i/o error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, msg: impl Into<String>) -> Self {
        Error::Shape {
            op,
            msg: msg.into(),
        }
    }

    pub(crate) fn config(key: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            msg: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
