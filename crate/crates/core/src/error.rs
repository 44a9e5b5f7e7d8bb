use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Operand shapes are incompatible with the requested operation.
    #[error("dimension error in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    /// A caller broke an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A model, loss, or training configuration is inconsistent.
    #[error("configuration error: {0}")]
    Config(String),

    /// Input data violates a documented invariant.
    #[error("validation error: {0}")]
    Validation(String),

    #[error("parse error in {}: {detail}", path.display())]
    Parse { path: PathBuf, detail: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("non-finite loss or prediction at step {step}")]
    NonFinite { step: u64 },

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
