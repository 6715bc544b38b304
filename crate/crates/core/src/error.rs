use thiserror::Error;

pub type Result<T> = std::result::Result<T, AenError>;

#[derive(Debug, Error)]
pub enum AenError {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("degenerate input to {0}: no unmasked entries")]
    Degenerate(&'static str),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("index {index} out of range for table of {size} rows")]
    Lookup { index: usize, size: usize },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("non-finite loss {value} at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize, value: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl AenError {
    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        AenError::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        AenError::Contract(msg.into())
    }
}
