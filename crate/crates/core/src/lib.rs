//! Non-parametric latent priors with low interpolation mismatch.
//!
//! Linear interpolation between two latent samples `z₁, z₂` drawn from a
//! prior produces points whose distribution is generally not the prior. For
//! finite-variance priors the interpolant is always narrower, and the gap is
//! largest at the midpoint. This crate
//!
//! - represents 1-D priors as mass vectors on a uniform grid ([`density`]),
//! - computes the exact binned interpolant distribution ([`interpolant`]),
//! - searches for a prior that minimizes its divergence to its own midpoint
//!   distribution under a minimum-variance bound ([`optimizer`]),
//! - samples continuous latent vectors from that prior and from the usual
//!   baselines ([`sampler`]),
//! - and measures mismatch in one and many dimensions ([`diagnostics`]).

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod density;
pub mod diagnostics;
pub mod error;
pub mod interpolant;
pub mod optimizer;
pub mod rng;
pub mod sampler;

pub use density::{BinnedDensity, DivergenceKind, GridSpec};
pub use error::{Error, Result};
pub use optimizer::{solve_prior, SolveReport, SolverConfig};
