use std::path::PathBuf;

/// Errors raised by the engine. Every variant names the offending entity so
/// operators can fix the input without a debugger.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid schema: {0}")]
    Schema(String),

    #[error("duplicate item id `{0}`")]
    DuplicateItem(String),

    #[error("item `{item}`: value `{value}` is not in the domain of feature `{feature}`")]
    DomainViolation {
        item: String,
        feature: String,
        value: String,
    },

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("unknown feature `{0}`")]
    UnknownFeature(String),

    #[error("unknown item `{0}`")]
    UnknownItem(String),

    #[error("invalid sensitive spec: {0}")]
    SensitiveSpec(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("undefined: {0}")]
    Undefined(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Csv {
        context: String,
        #[source]
        source: csv::Error,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn csv(context: impl Into<String>, source: csv::Error) -> Self {
        Error::Csv {
            context: context.into(),
            source,
        }
    }
}
