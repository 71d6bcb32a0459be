//! Desk-scale data, training and evaluation for the calibration network.
//!
//! [`synth`] generates piecewise-constant reflectance scenes and relights
//! them under parametric illuminations; [`train`] fits a
//! [`SitNet`](hsical_sitnet::SitNet) with L1 loss and Adam; [`eval`] scores
//! any [`Calibrator`] per illumination label and band range.

pub mod dataset;
pub mod error;
pub mod eval;
pub mod synth;
pub mod train;

pub use dataset::{load_dataset, save_dataset, select, split_scenes, Splits};
pub use error::{Error, Result};
pub use eval::{evaluate_model, Calibrator, EvalRow, EvalTable, GrayWorld, Identity, SitCalibrator};
pub use synth::{synth_dataset, synth_scene, IllumKind, Pair, Scene, SynthConfig};
pub use train::{mean_l1, train, train_from, TrainConfig, TrainOutcome};
