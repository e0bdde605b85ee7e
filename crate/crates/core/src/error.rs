use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("degenerate standardization: all training responses equal {0}")]
    DegenerateStandardization(f64),

    #[error("config error at '{key}': {message}")]
    Config { key: String, message: String },

    #[error("invalid summary: {0}")]
    Summary(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config { key: key.into(), message: message.into() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
