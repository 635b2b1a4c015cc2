//! Mean-field solvers and log-gas Monte Carlo for capacity-constrained
//! densities in the lowest Landau level.

pub mod electrostatic;
pub mod error;
pub mod experiments;
pub mod flocking;
pub mod grid;
pub mod plasma;
pub mod potentials;

pub use error::{Error, Result};
