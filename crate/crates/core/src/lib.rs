//! Exact quantum-state primitives for the tomography workbench: canonical
//! states, Pauli observables, outcome statistics, fidelity, and the
//! measurement layer that turns a state into an M1/M2 dataset.

pub mod error;
pub mod measurement;
pub mod observables;
pub mod pauli;
pub mod seed;
pub mod state;
pub mod validate;

pub use error::{QstError, Result};
pub use measurement::{BasisSet, MeasurementDataset, Method};
pub use observables::{expectation, outcome_probabilities, purity};
pub use pauli::{Operator, Pauli, PauliString};
pub use state::{
    make_mixed_state, make_pure_state, DensityMatrix, MixedKind, PureKind, PureState, State,
    StateRef,
};
pub use validate::{fidelity, uhlmann_fidelity, validate_density, ValidationReport};
