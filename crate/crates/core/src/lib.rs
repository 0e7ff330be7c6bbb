//! Ising models on balls of the d-regular tree: exact belief-propagation
//! inference, exact samplers, the magnetization-drift SDE systems with shared
//! vertex-keyed noise, and a statistical verification harness.

// Index loops mirror the vertex-indexed math; `!(x >= 0.0)` rejects NaN on purpose.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod harness;
pub mod inference;
pub mod rng;
pub mod samplers;
pub mod sde;
pub mod topology;

pub use error::{Error, Result};
