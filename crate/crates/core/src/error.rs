use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("bad magic bytes {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported format version {0}")]
    VersionUnsupported(u32),
    #[error("payload truncated: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },
    #[error("wavelengths must be strictly increasing (index {index})")]
    NonMonotonicWavelengths { index: usize },
    #[error("invalid cube dimensions: {0}")]
    InvalidDims(String),
    #[error("unknown cube kind tag {0}")]
    UnknownKind(u8),
    #[error("I/O failure: {0}")]
    Io(#[from] io::Error),
    #[error("no source band falls in the {nominal} nm bin")]
    InsufficientCoverage { nominal: f64 },
    #[error("no band lies inside {0}")]
    EmptySelection(String),
    #[error("invalid band range: {0}")]
    InvalidRange(String),
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("wavelength grids differ")]
    WavelengthMismatch,
    #[error("illumination curve has not been dark corrected")]
    NotDarkCorrected,
    #[error("region of interest is empty or out of bounds")]
    EmptyRoi,
    #[error("band {band} mean {mean} is below the admissible floor")]
    DegenerateBand { band: usize, mean: f64 },
    #[error("band {band} of the reference has mean {mean} below the admissible floor")]
    DegenerateBandMean { band: usize, mean: f64 },
    #[error("every band of the reference has zero maximum")]
    AllBandsDegenerate,
    #[error("every pixel has a zero-norm spectrum")]
    AllPixelsDegenerate,
    #[error("illumination CSV: {0}")]
    Csv(String),
}

impl Error {
    /// Stable machine-readable category name.
    pub fn category(&self) -> &'static str {
        match self {
            Error::BadMagic(_) => "BadMagic",
            Error::VersionUnsupported(_) => "VersionUnsupported",
            Error::TruncatedPayload { .. } => "TruncatedPayload",
            Error::NonMonotonicWavelengths { .. } => "NonMonotonicWavelengths",
            Error::InvalidDims(_) => "InvalidDims",
            Error::UnknownKind(_) => "UnknownKind",
            Error::Io(_) => "IoFailure",
            Error::InsufficientCoverage { .. } => "InsufficientCoverage",
            Error::EmptySelection(_) => "EmptySelection",
            Error::InvalidRange(_) => "InvalidRange",
            Error::DimMismatch(_) => "DimMismatch",
            Error::WavelengthMismatch => "WavelengthMismatch",
            Error::NotDarkCorrected => "NotDarkCorrected",
            Error::EmptyRoi => "EmptyRoi",
            Error::DegenerateBand { .. } => "DegenerateBand",
            Error::DegenerateBandMean { .. } => "DegenerateBandMean",
            Error::AllBandsDegenerate => "AllBandsDegenerate",
            Error::AllPixelsDegenerate => "AllPixelsDegenerate",
            Error::Csv(_) => "CsvFailure",
        }
    }
}
