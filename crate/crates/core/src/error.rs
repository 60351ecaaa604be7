use thiserror::Error;

/// Errors surfaced by the tensor core, the model, and the simulators.
#[derive(Error, Debug)]
pub enum Error {
    /// Incompatible tensor shapes or element counts.
    #[error("dimension error: {0}")]
    Dim(String),

    /// Invalid argument value (out-of-range probability, bad stride, ...).
    #[error("argument error: {0}")]
    Arg(String),

    /// Invalid model or experiment configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// Operation called in a state that does not permit it.
    #[error("state error: {0}")]
    State(String),

    /// Malformed input file (IDX, CIFAR binary, checkpoint).
    #[error("format error: {0}")]
    Format(String),

    /// Non-finite values where finite ones are required.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Dirichlet partitioning could not satisfy its constraints.
    #[error("partition error: {0}")]
    Partition(String),

    /// Violation of the federated protocol (empty update list, ...).
    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn dim(msg: impl Into<String>) -> Self {
        Error::Dim(msg.into())
    }
    pub fn arg(msg: impl Into<String>) -> Self {
        Error::Arg(msg.into())
    }
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
    pub fn state(msg: impl Into<String>) -> Self {
        Error::State(msg.into())
    }
    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}
