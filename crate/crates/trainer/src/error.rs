use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] hsical_core::Error),
    #[error(transparent)]
    Net(#[from] hsical_sitnet::Error),
    #[error(transparent)]
    Tensor(#[from] hsical_tensor::Error),
    #[error("loss became non-finite at step {step} (last finite loss {last_loss})")]
    DivergenceDetected { step: usize, last_loss: f64 },
    #[error("empty dataset: {0}")]
    EmptyDataset(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("dataset manifest: {0}")]
    Manifest(String),
    #[error("I/O failure: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn category(&self) -> &'static str {
        match self {
            Error::Core(e) => e.category(),
            Error::Net(e) => e.category(),
            Error::Tensor(e) => e.category(),
            Error::DivergenceDetected { .. } => "DivergenceDetected",
            Error::EmptyDataset(_) => "EmptyDataset",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::Manifest(_) => "ManifestInvalid",
            Error::Io(_) => "IoFailure",
        }
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Manifest(e.to_string())
    }
}
