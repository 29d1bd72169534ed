//! Deploying trained dense layers onto simulated memristor crossbars.
//!
//! Weights are stored as pairs of conductances, rounded to a fixed set of
//! programmable levels, and read back through a multiplicative noise model.
//! Inputs drive the array rows and outputs are collected as column currents,
//! so a weight matrix is laid out `[inputs, outputs]`.

mod array;
mod config;
mod deploy;
mod error;

pub use array::{analog_mvm, program_weights, ProgrammedCrossbar, Tile};
pub use config::CrossbarConfig;
pub use deploy::{run_network_on_crossbar, CrossbarBackend, DegradationReport, MAX_LOWERING_QUBITS};
pub use error::{CrossbarError, Result};
