use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{file}:{line}: {message}")]
    Parse {
        file: PathBuf,
        line: usize,
        message: String,
    },

    #[error("line count mismatch in {dir}: `{file}` has {found} lines, `seq.in` has {expected}")]
    LineCount {
        dir: PathBuf,
        file: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value in tensor #{node} ({op}, shape {shape:?})")]
    NonFinite {
        node: usize,
        op: &'static str,
        shape: Vec<usize>,
    },

    #[error("{dimension} mismatch: checkpoint has {checkpoint}, data has {data}")]
    Mismatch {
        dimension: &'static str,
        checkpoint: String,
        data: String,
    },

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
