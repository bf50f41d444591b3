//! Exact and Monte Carlo Gibbs measures for disordered Hamiltonians on the
//! hypercube, with finite-size audits of energy concentration and of the
//! Ghirlanda-Guerra replica identities for the Sherrington-Kirkpatrick model.
//!
//! Sign convention: the Gibbs weight of a configuration is `exp(+beta * H)`.

// `!(x > 0.0)` style checks reject NaN on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod concentration;
pub mod error;
pub mod exact;
pub mod harness;
pub mod mc;
pub mod model;
pub mod replica;
pub mod rng;
pub mod spin;
pub mod stats;

pub use error::{Error, Result};
pub use model::{Beta, DisorderSample, ModelSpec};
pub use spin::SpinConfiguration;
pub use stats::Estimate;
