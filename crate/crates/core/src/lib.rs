//! Branching particles with mass.
//!
//! Particles grow linearly in mass, split at rate `beta` into two daughters that
//! share the parent's mass in a random symmetric proportion, and die at rate
//! `mu`. Exact event-driven simulators (with or without Brownian motion in
//! space) sit next to closed forms and numerical solvers for the moments, so
//! one side can always be checked against the other.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod counts;
pub mod error;
pub mod export;
pub mod fde;
pub mod kernel;
pub mod mass_process;
pub mod ode;
pub mod params;
pub mod population;
pub mod quadrature;
pub mod rng;
pub mod spatial;
pub mod stats;

pub use error::{Error, Result};
pub use kernel::{sample_theta, KernelMoments, SplitKernel, TabulatedDensity};
pub use params::{validate_params, DerivedParams, ModelParams};
