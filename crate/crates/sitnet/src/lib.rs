//! Spectral Illumination Transformer.
//!
//! A SIT-U block mixes feature channels with a softmax-normalised affinity
//! built from two branches: channel-transposed spectral attention and a
//! rank-1 illumination affinity derived from pooled per-channel means.
//! [`SitNet`] stacks blocks in a U-shaped encoder–decoder.

pub mod config;
pub mod error;
pub mod gradcheck;
pub mod net;
pub mod params;
pub mod unit;

pub use config::{Ablation, Combine, SitConfig};
pub use error::{Error, Result};
pub use net::{param_count, param_specs, sit_forward, SitNet};
pub use params::{Bound, ParamSpec, ParamStore};
pub use unit::{AiOverride, illumination_attention, sit_unit_forward, spectral_attention, UnitHooks, UnitShape, UnitTrace};
