use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch { left: Vec<usize>, right: Vec<usize> },
    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },
    #[error("backward called without a matching forward pass")]
    NoForwardPass,
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("no fully visible samples")]
    NoFullyVisibleSamples,
    #[error("empty subset: {0}")]
    EmptySubset(String),
    #[error("empty mask library")]
    EmptyMaskLibrary,
    #[error("scoring head is untrained")]
    UntrainedHead,
    #[error("unknown proposal id {0}")]
    UnknownProposal(u64),
    #[error("malformed file at byte {offset}: {reason}")]
    Malformed { offset: u64, reason: String },
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn precondition(msg: impl Into<String>) -> Self {
        Error::Precondition(msg.into())
    }

    /// Process exit status for the CLI: 3 for I/O failures, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io(_) => 3,
            _ => 2,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
