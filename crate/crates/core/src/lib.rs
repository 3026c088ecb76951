//! Cluster expansion for finite lattice spin systems.
//!
//! Computes `log Z(J)` and truncated correlations of small lattice models by
//! interpolating polymer activities with the forest formula, assembling them
//! into a Mayer series, and checking the result against a brute-force
//! integration oracle.

pub(crate) mod algebra;
pub mod combinatorics;
pub mod config;
pub mod correlation;
pub mod covariance;
pub mod engine;
pub mod error;
pub mod interaction;
pub mod lattice;
pub mod norms;
pub mod oracle;
pub mod quadrature;

pub use error::{Error, Result};
