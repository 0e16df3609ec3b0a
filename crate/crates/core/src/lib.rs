//! Consensus-on-measurement distributed Kalman filtering with a finite
//! number of fusion rounds per sampling instant.
//!
//! The crate covers the runtime filter ([`filter`]), the closed-form
//! steady-state covariances of every node ([`analysis`]), and a seeded
//! Monte Carlo harness that checks the two against each other
//! ([`simulate`]).

pub mod analysis;
pub mod error;
pub mod filter;
pub mod model;
pub mod network;
pub mod numerics;
pub mod simulate;

pub use error::{Error, Result};
pub use numerics::{Matrix, Vector};
