use thiserror::Error;

/// Errors surfaced by the numeric core and data pipeline.
#[derive(Error, Debug)]
pub enum Error {
    /// Tensor shapes incompatible for the requested operation.
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// Input outside the mathematical domain of the operation.
    #[error("{op}: domain error: {detail}")]
    Domain { op: &'static str, detail: String },

    /// A caller-side contract was violated (bad argument, wrong usage).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Malformed binary file (IDX ingestion).
    #[error("format error at byte {offset}: {detail}")]
    Format { offset: u64, detail: String },

    /// Training aborted on a non-finite loss; carries the component values
    /// at the failing step for diagnosis.
    #[error("non-finite loss at step {step}: {breakdown}")]
    NonFiniteLoss { step: u64, breakdown: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
}
