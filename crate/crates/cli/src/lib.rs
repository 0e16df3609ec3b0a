//! Scenario loading and the `cmdf` commands: steady-state analysis, Monte
//! Carlo simulation, property verification and graph inspection.

pub mod commands;
pub mod error;
pub mod scenario;
pub mod verify;

pub use error::{CliError, CliResult};
pub use scenario::Scenario;
