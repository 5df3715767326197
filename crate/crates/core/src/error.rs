use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid band config: {}", .0.join("; "))]
    InvalidBandConfig(Vec<String>),

    #[error("invalid app config: {}", .0.join("; "))]
    InvalidAppConfig(Vec<String>),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("topology error: {0}")]
    Topology(String),

    #[error("invalid waterfall table: {0}")]
    Waterfall(String),

    #[error("schedule error: {0}")]
    Schedule(String),

    #[error("metrics error: {0}")]
    Metrics(String),

    #[error("experiment config error: {0}")]
    Config(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("IO error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
