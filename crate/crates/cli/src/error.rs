use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Core(#[from] macq::Error),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        Self::Usage(msg.into())
    }

    /// 0 ok, 2 usage or schema, 3 training, 4 analysis or smoothing, 5 i/o.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => 2,
            Self::Io { .. } => 5,
            Self::Core(e) => match e {
                macq::Error::Training { .. } => 3,
                macq::Error::Smoothing { .. } | macq::Error::Numeric { .. } | macq::Error::Domain { .. } => 4,
                macq::Error::Io { .. } => 5,
                _ => 2,
            },
        }
    }
}

pub(crate) fn io_err(path: &std::path::Path, source: std::io::Error) -> CliError {
    CliError::Io {
        path: path.display().to_string(),
        source,
    }
}
