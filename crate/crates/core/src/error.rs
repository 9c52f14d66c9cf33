use thiserror::Error;

/// Crate-wide error type.
#[derive(Error, Debug)]
pub enum Error {
    /// Invalid configuration value. `field` is a dotted path into the config
    /// structure (e.g. "train.batch").
    #[error("invalid config at `{field}`: {message}")]
    Config { field: String, message: String },

    /// Shape or dimension mismatch in a tensor operation.
    #[error("shape error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    /// Misuse of an API (e.g. backward on a non-scalar loss).
    #[error("usage error: {0}")]
    Usage(String),

    /// Bad input data (dimension mismatch against the graph, non-finite
    /// values, malformed files).
    #[error("data error: {0}")]
    Data(String),

    /// A computation produced a non-finite value.
    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error in {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config { field: field.into(), message: message.into() }
    }

    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape { op, detail: detail.into() }
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn json(path: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
