use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid config: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("malformed log: {0}")]
    MalformedLog(String),

    #[error("malformed log at line {line}: {message}")]
    MalformedLine { line: usize, message: String },

    #[error("numeric error in {place}: {message}")]
    Numeric { place: String, message: String },

    #[error("routing error: flow {flow} is not valid under objective mode {mode}")]
    Routing { flow: String, mode: String },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
