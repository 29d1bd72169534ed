//! Experiment wiring behind the `qst` binary: config resolution, the
//! state-to-report pipeline and the four commands.

pub mod commands;
pub mod config;
pub mod error;
pub mod experiment;

pub use commands::{
    bench_arch, crossbar_eval, reconstruct, sweep_bases, BenchRow, CellStatus, Outcome, SweepCell, SweepResult,
    EXIT_ERROR, EXIT_NOT_CONVERGED, EXIT_OK,
};
pub use config::{ExperimentConfig, Overrides, SCHEMA_VERSION};
pub use error::{HarnessError, Result};
