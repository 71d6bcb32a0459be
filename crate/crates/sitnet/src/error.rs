use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] hsical_tensor::Error),
    #[error("spatial size {size} cannot survive the illumination reduction chain (needs a multiple of {required})")]
    SpatialUnderflow { size: usize, required: usize },
    #[error("spatial dims {height}×{width} must be multiples of {multiple}")]
    IncompatibleSpatialDims { height: usize, width: usize, multiple: usize },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("unsupported ablation {0:?}")]
    AblationUnsupported(String),
    #[error("missing parameter {0}")]
    MissingParam(String),
}

impl Error {
    pub fn category(&self) -> &'static str {
        match self {
            Error::Tensor(e) => e.category(),
            Error::SpatialUnderflow { .. } => "SpatialUnderflow",
            Error::IncompatibleSpatialDims { .. } => "IncompatibleSpatialDims",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::AblationUnsupported(_) => "AblationUnsupported",
            Error::MissingParam(_) => "MissingParam",
        }
    }
}
