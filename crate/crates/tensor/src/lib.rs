//! A small dense `f64` tensor library with a reverse-mode tape.
//!
//! Every primitive recorded on a [`Graph`] has a hand-written backward rule;
//! [`gradcheck`] compares those rules against central finite differences.

pub mod adam;
pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod graph;
mod kernels;
pub mod tensor;

pub use adam::{adam_step, Adam, AdamConfig, AdamState};
pub use checkpoint::Checkpoint;
pub use error::{Error, Result};
pub use graph::{Graph, Var};
pub use tensor::Tensor;
