use thiserror::Error;

/// Errors surfaced by every fallible operation in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unsupported error model: {0}")]
    UnsupportedModel(String),

    #[error("resource limit exceeded: {0}")]
    ResourceLimit(String),

    #[error("infeasible configuration: {0}")]
    Infeasible(String),

    #[error("config parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("tensor cache format error: {0}")]
    CacheFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

impl Error {
    /// Prefixes the message with `ctx`, keeping the variant.
    pub fn context(self, ctx: &str) -> Self {
        match self {
            Error::InvalidArgument(m) => Error::InvalidArgument(format!("{ctx}: {m}")),
            Error::UnsupportedModel(m) => Error::UnsupportedModel(format!("{ctx}: {m}")),
            Error::ResourceLimit(m) => Error::ResourceLimit(format!("{ctx}: {m}")),
            Error::Infeasible(m) => Error::Infeasible(format!("{ctx}: {m}")),
            Error::CacheFormat(m) => Error::CacheFormat(format!("{ctx}: {m}")),
            other => other,
        }
    }
}
