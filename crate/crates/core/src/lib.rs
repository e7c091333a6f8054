//! Bayesian analysis of static light scattering experiments: trace
//! cleaning, the Rayleigh/refractive-index forward model, an
//! errors-in-concentration hierarchical model with MCMC, model comparison,
//! posterior predictive checks and a simulation harness.

pub mod domain;
pub mod error;
pub mod forward;
pub mod inference;
pub mod model;
pub mod sampler;
pub mod preprocess;
pub mod simulate;
pub mod stats;

pub use error::{Error, Result};
