use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid parameters, mismatched shapes, or an unknown experiment.
    #[error("configuration error: {0}")]
    Config(String),

    /// A call that violates an operation's preconditions.
    #[error("usage error: {0}")]
    Usage(String),

    /// An operation produced a non-finite value.
    #[error("numeric error in {op}: {detail}")]
    Numeric { op: String, detail: String },

    /// Training produced a non-finite objective. `checkpoint` holds the last
    /// finite network in the JSON checkpoint format.
    #[error("training diverged at iteration {iteration} ({phase}): {detail}")]
    Diverged {
        iteration: usize,
        phase: String,
        detail: String,
        checkpoint: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub(crate) fn numeric(op: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Numeric {
            op: op.into(),
            detail: detail.into(),
        }
    }

    /// Prefixes the operation tag of a numeric error, leaving other kinds intact.
    pub fn in_phase(self, phase: &str) -> Self {
        match self {
            Error::Numeric { op, detail } => Error::Numeric {
                op: format!("{phase}/{op}"),
                detail,
            },
            other => other,
        }
    }
}
