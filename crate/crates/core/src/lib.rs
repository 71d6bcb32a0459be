//! Hyperspectral radiometric calibration primitives.
//!
//! The crate is organised around [`HyperCube`], a band-major `H×W×C` volume
//! with per-band wavelengths, and the operations that act on it:
//!
//! * [`hypercube`]: the cube model, its binary container and band resampling.
//! * [`radiometry`]: dark-current subtraction, white-reference illumination
//!   measurement, ratio calibration and illumination compositing.
//! * [`grayworld`]: the Gray-World illumination estimator.
//! * [`metrics`]: PSNR, RMSE, ERGAS and SAM with band-range reports.

pub mod error;
pub mod grayworld;
pub mod hypercube;
pub mod metrics;
pub mod radiometry;

pub use error::{Error, Result};
pub use hypercube::{BandRange, CubeKind, HyperCube};
pub use radiometry::{IlluminationCurve, Roi};

/// Floor applied to illumination values and minimum admissible band mean.
pub const EPS_L: f64 = 1e-6;
