use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration `{field}`: {reason}")]
    Config { field: &'static str, reason: String },

    #[error("{what} {value:?} out of bounds {bound:?}")]
    Bounds {
        what: &'static str,
        value: Vec<i64>,
        bound: Vec<i64>,
    },

    #[error("format error in `{field}`: {reason}")]
    Format { field: &'static str, reason: String },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("non-finite value at step {step} ({what})")]
    Numeric { step: usize, what: &'static str },

    #[error("capacity exceeded for {what}: {requested} > {limit}")]
    Capacity {
        what: &'static str,
        requested: u64,
        limit: u64,
    },

    #[error("lookup failed: {0}")]
    Lookup(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(field: &'static str, reason: impl Into<String>) -> Self {
        Error::Config {
            field,
            reason: reason.into(),
        }
    }

    pub(crate) fn format(field: &'static str, reason: impl Into<String>) -> Self {
        Error::Format {
            field,
            reason: reason.into(),
        }
    }
}
