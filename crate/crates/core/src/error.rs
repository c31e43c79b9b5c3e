use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch at node {node}: {msg}")]
    ShapeMismatch { node: usize, msg: String },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("non-finite gradient for parameter {0}")]
    NonFiniteGradient(usize),

    #[error("loss node {0} is not scalar")]
    LossNotScalar(usize),

    #[error("graph values missing or stale: {0}")]
    StaleValues(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty loss mask")]
    EmptyMask,

    #[error("no positive pixels left in label map")]
    LabelLost,

    #[error("training aborted: non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("bad file format in {path}: {msg}")]
    Format { path: String, msg: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
