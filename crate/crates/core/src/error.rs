use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("input shape mismatch: expected {expected}, found {found}")]
    InputShape { expected: usize, found: usize },

    #[error("non-finite value in {what}")]
    Domain { what: String },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("smoothing failed at level {level}: {reason}")]
    Smoothing { level: String, reason: String },

    #[error("non-finite derivative at instance {instance}")]
    Numeric { instance: usize },

    #[error("model construction: {0}")]
    Model(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("parse error at row {row}, column `{column}`: {reason}")]
    Parse {
        row: usize,
        column: String,
        reason: String,
    },

    #[error("validation error at row {row}: {reason}")]
    Validation { row: usize, reason: String },

    #[error("constant column `{column}` cannot be standardized")]
    ConstantColumn { column: String },

    #[error("training diverged at epoch {epoch}")]
    Training { epoch: usize },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }
}
