use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Evaluation at a point where a quantity is undefined (e.g. the kernel at `y = 0`).
    #[error("domain error: {0}")]
    Domain(String),

    #[error("ellipticity violation: coefficient {value} outside [{lower}, {upper}]")]
    Ellipticity { value: f64, lower: f64, upper: f64 },

    /// Invalid arguments or parameters supplied by the caller.
    #[error("usage error: {0}")]
    Usage(String),

    #[error("evaluation error at node {node}: {message}")]
    Evaluation { node: usize, message: String },

    #[error("resource limit exceeded: {0}")]
    Resource(String),

    #[error("solver error: {0}")]
    Solver(String),

    #[error("serialization error: {0}")]
    Serialization(String),
}

impl Error {
    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serialization(e.to_string())
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Serialization(e.to_string())
    }
}
