use thiserror::Error;

/// Errors raised by the estimators, the wire codec and the scenario harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-positive depth {0}")]
    NonPositiveDepth(f64),

    #[error("non-finite input: {0}")]
    NonFiniteInput(&'static str),

    #[error("innovation covariance is singular")]
    SingularInnovation,

    #[error("observation for point {0} is missing rate terms")]
    MissingRates(u32),

    #[error("unknown point {0}")]
    UnknownPoint(u32),

    #[error("point {0} is not visible")]
    NotVisible(u32),

    #[error("malformed message: {0}")]
    MalformedMessage(String),

    #[error("invalid gains: {0}")]
    InvalidGains(String),

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
