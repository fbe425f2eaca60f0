//! Simulation of interacting particle systems of McKean-Vlasov type and
//! adaptive nonparametric estimation of their density, drift and
//! pairwise interaction force.
//!
//! The crate is organised bottom-up:
//!
//! - [`model`]: drift / diffusion / initial-law specifications, empirical
//!   clouds and the closed-form mean-field Ornstein-Uhlenbeck oracle.
//! - [`traj`]: trajectory ensembles and the `MKV1` binary format.
//! - [`simulator`]: Euler-Maruyama simulation with reproducible noise streams.
//! - [`kernels`]: compactly supported kernels of prescribed order.
//! - [`gl`]: Goldenshluger-Lepski selection over partially ordered grids.
//! - [`density`], [`drift`]: pointwise kernel estimators with GL bandwidths.
//! - [`interaction`]: Fourier-quotient recovery of the interaction force.
//! - [`diagnostics`]: Wasserstein distances, tail envelopes, rate fits.

pub mod density;
pub mod diagnostics;
pub mod drift;
pub mod error;
pub mod gl;
pub mod interaction;
pub mod kernels;
pub mod model;
pub mod quadrature;
pub mod rng;
pub mod simulator;
pub mod traj;

pub use error::{Error, Result};
