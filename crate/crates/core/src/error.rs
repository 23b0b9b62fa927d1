use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("format error in {path} at byte offset {offset}: {message}")]
    Format {
        path: PathBuf,
        offset: u64,
        message: String,
    },

    #[error("parse error in {path} line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("non-finite value at epoch {epoch}, step {step}: {what}")]
    NonFinite {
        epoch: usize,
        step: usize,
        what: String,
    },

    #[error("undefined result: {0}")]
    Undefined(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
