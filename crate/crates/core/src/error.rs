use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Shapes, dimensions or pipeline settings that cannot work together.
    #[error("configuration error: {0}")]
    Config(String),
    /// A scalar argument outside its valid domain (temperature, step counts, ...).
    #[error("parameter error: {0}")]
    Parameter(String),
    /// Inputs to a computation that violate its preconditions.
    #[error("input error: {0}")]
    Input(String),
    /// Malformed data in a dataset or model file.
    #[error("data error in {source_name}{}: {message}", line.map(|l| format!(" line {l}")).unwrap_or_default())]
    Data {
        source_name: String,
        line: Option<usize>,
        message: String,
    },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("serialization error: {0}")]
    Serialization(String),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn parameter(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub fn data(source_name: impl Into<String>, line: Option<usize>, msg: impl Into<String>) -> Self {
        Error::Data {
            source_name: source_name.into(),
            line,
            message: msg.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by invalid user input rather than the environment.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Io { .. } | Error::Serialization(_))
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serialization(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Serialization(e.to_string())
    }
}
