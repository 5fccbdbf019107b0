use thiserror::Error;

/// Errors raised by the scattering solver and the training machinery.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("singular evaluation: {0}")]
    SingularEvaluation(String),

    #[error("resource limit exceeded: {what} needs {requested}, cap is {cap}")]
    ResourceLimit {
        what: &'static str,
        requested: usize,
        cap: usize,
    },

    #[error("singular system: pivot magnitude {pivot:e} at column {column}")]
    SingularSystem { column: usize, pivot: f64 },

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    /// Training diverged; carries the parameters that produced the bad loss.
    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss {
        epoch: usize,
        field: Box<crate::nn::NeuralField>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("{path}: {source}")]
    File {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

pub(crate) fn file_error(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::File {
        path: path.display().to_string(),
        source,
    }
}
