//! Numerical laboratory for Ising models perturbed by a Sherrington–Kirkpatrick
//! mean-field spin glass.

pub mod disorder;
pub mod error;
pub mod exact;
pub mod fluctuation;
pub mod hamiltonians;
pub mod lattice;
pub mod mc;
pub mod numerics;
pub mod rs;
pub mod stats;

pub use error::{Error, Result};
