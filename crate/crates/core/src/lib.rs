//! Simulation and analysis of mean-field kinetic Langevin dynamics: particle
//! systems, the McKean–Vlasov limit, certificates for the uniform-in-time
//! propagation-of-chaos regime, and Wasserstein-type metrics.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod metrics;
pub mod particles;
pub mod potential;
pub mod registry;
pub mod rng;
pub mod serde_ext;
pub mod vlasov;

pub use error::{KclError, Result};
