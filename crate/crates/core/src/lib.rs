//! Sparse Bayesian linear regression with hyperbolic errors.
//!
//! The fitting procedure has two steps. An ECM algorithm locates the
//! posterior mode under a continuous spike-and-slab prior and screens the
//! covariates; a Gibbs sampler with a Metropolis-Hastings model move then
//! explores the point-mass spike-and-slab posterior on the surviving columns,
//! including the tail-shape parameter of the hyperbolic error law.
//!
//! Module map:
//!
//! * [`special_fn`]: log-scale modified Bessel functions `K_λ`.
//! * [`distributions`]: GIG, hyperbolic and the standard samplers/densities.
//! * [`data`]: datasets, standardization, CSV, simulation scenarios.
//! * [`ecm`]: the screening step.
//! * [`cv`]: cross-validated choice of the spike scale.
//! * [`gibbs`]: the sampling step.
//! * [`inference`]: posterior summaries, prediction and evaluation metrics.
//! * [`pipeline`]: configuration, persistence and the end-to-end commands.

pub mod cv;
pub mod data;
pub mod distributions;
pub mod ecm;
mod error;
pub mod gibbs;
pub mod inference;
pub mod linalg;
pub mod pipeline;
pub mod special_fn;

pub use error::{Error, Result};
