use thiserror::Error;

/// Errors raised anywhere in the toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("reference error: row {index} out of range for dataset of {len} rows")]
    Reference { index: usize, len: usize },

    #[error("format error at byte {offset}: {reason}")]
    Format { offset: usize, reason: String },

    #[error("ledger error: {0}")]
    Ledger(String),

    #[error("commitment violation at step {step}: {reason}")]
    CommitmentViolation { step: usize, reason: String },

    #[error("data unavailable for step {step}: {reason}")]
    Availability { step: usize, reason: String },

    #[error("proof structure error: {0}")]
    ProofStructure(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("attack construction failed: {0}")]
    AttackConstruction(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
