//! Numerical engine for thermal Casimir-Polder forces on multilevel atoms
//! above planar magnetoelectric multilayers kept at nonuniform temperature.
//!
//! The crate is organised bottom-up:
//!
//! - [`quad`]: adaptive Gauss-Kronrod integration, principal values,
//!   Matsubara sums and a finite-difference gradient used by tests.
//! - [`material`] and [`greenfunc`]: dispersive media, layer stacks and the
//!   dyadic Green tensor of the planar problem.
//! - [`thermalenv`]: temperature fields, photon numbers and region-resolved
//!   absorption kernels.
//! - [`atomdyn`]: level structure, decay rates, level shifts and rate
//!   equation dynamics.
//! - [`force`]: state-resolved forces, equilibrium Matsubara forces and the
//!   long-time Lifshitz limit.

pub mod atomdyn;
pub mod constants;
pub mod error;
pub mod force;
pub mod greenfunc;
pub mod material;
pub mod quad;
pub mod thermalenv;

pub use error::{Error, Result};
pub use nalgebra;
pub use num_complex;
