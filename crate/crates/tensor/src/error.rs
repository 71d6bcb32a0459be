use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("output size {0} is not integral for the given stride and padding")]
    NonIntegralOutput(String),
    #[error("spatial size {size} is not divisible by window {window}")]
    NonDivisible { size: usize, window: usize },
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("loss does not depend on any tensor that requires a gradient")]
    DisconnectedGraph,
    #[error("checkpoint: bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("checkpoint: unsupported version {0}")]
    VersionUnsupported(u32),
    #[error("checkpoint: payload truncated")]
    TruncatedPayload,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("I/O failure: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn category(&self) -> &'static str {
        match self {
            Error::ShapeMismatch(_) => "ShapeMismatch",
            Error::NonIntegralOutput(_) => "NonIntegralOutput",
            Error::NonDivisible { .. } => "NonDivisible",
            Error::NonScalarLoss(_) => "NonScalarLoss",
            Error::DisconnectedGraph => "DisconnectedGraph",
            Error::BadMagic(_) => "BadMagic",
            Error::VersionUnsupported(_) => "VersionUnsupported",
            Error::TruncatedPayload => "TruncatedPayload",
            Error::Checkpoint(_) => "CheckpointInvalid",
            Error::Io(_) => "IoFailure",
        }
    }
}
