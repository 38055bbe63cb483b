//! Flow-matching transport maps coupled with randomized quasi-Monte Carlo
//! integration.
//!
//! The crate builds importance-sampling moment estimators from three parts:
//!
//! * a scrambled Sobol' point-set engine on `[0,1)^d` ([`qmc`]),
//! * a transport map `τ = flow ∘ logit` that pushes those points to a target
//!   distribution on `ℝ^d` with an exactly tracked log-determinant
//!   ([`base`], [`field`], [`transport`]), where the flow is a fixed-step
//!   discretization of a neural ODE trained by conditional flow matching
//!   ([`train`]),
//! * estimators that either average the transported points directly or
//!   reweight them by `π/q_τ`, plus a replicated RMSE sweep harness
//!   ([`estimators`]) and a numerical certifier for the boundary growth
//!   behaviour of the composite integrand ([`growth`]).
//!
//! Everything is deterministic given explicit seeds; no global RNG state.

pub mod base;
pub mod checkpoint;
pub mod cli;
pub mod error;
pub mod estimators;
pub mod field;
pub mod growth;
pub mod linalg;
pub mod qmc;
pub mod stats;
pub mod targets;
pub mod train;
pub mod transport;

pub use error::{Error, Result};
