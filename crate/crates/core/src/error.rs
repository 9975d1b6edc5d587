use thiserror::Error;

/// Crate-wide error type. Variants are grouped by the subsystem that raises them.
#[derive(Error, Debug)]
pub enum Error {
    #[error("parameter schedule: {0}")]
    Schedule(String),

    #[error("spectral operator: {0}")]
    Spectral(String),

    #[error("noise generation: {0}")]
    Noise(String),

    #[error("beltrami construction: {0}")]
    Beltrami(String),

    #[error("transport solve: {0}")]
    Transport(String),

    #[error("iteration step: {0}")]
    Iterate(String),

    #[error("verification: {0}")]
    Verify(String),

    #[error("configuration: {0}")]
    Config(String),

    #[error("pipeline stage `{stage}` failed: {message}")]
    Stage { stage: String, message: String },

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn schedule(msg: impl Into<String>) -> Self {
        Error::Schedule(msg.into())
    }
    pub fn spectral(msg: impl Into<String>) -> Self {
        Error::Spectral(msg.into())
    }
    pub fn noise(msg: impl Into<String>) -> Self {
        Error::Noise(msg.into())
    }
    pub fn beltrami(msg: impl Into<String>) -> Self {
        Error::Beltrami(msg.into())
    }
    pub fn transport(msg: impl Into<String>) -> Self {
        Error::Transport(msg.into())
    }
    pub fn iterate(msg: impl Into<String>) -> Self {
        Error::Iterate(msg.into())
    }
    pub fn verify(msg: impl Into<String>) -> Self {
        Error::Verify(msg.into())
    }
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
