//! Gauge-fixed stochastic learning dynamics.
//!
//! Models with continuous parameter symmetries are simulated with (noisy) SGD,
//! and the entropic gauge correction `(sigma^2 / 2 beta) log det G` is computed
//! from the orbit Gram matrix of the symmetry generators.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dynamics;
pub mod error;
pub mod experiments;
pub mod linalg;
pub mod models;
pub mod reductions;
pub mod rng;
pub mod stats;
pub mod symmetry;

pub use error::{Error, Result};
