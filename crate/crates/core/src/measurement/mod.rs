//! Basis enumeration and selection, M1/M2 data acquisition, dataset files.

mod basis;
mod dataset;

pub use basis::{
    enumerate_bases, filter_informative, filter_nonzero_expectation, information_score, revealed_expectations,
    is_informationally_complete, select_bases, Alphabet, BasisSet, CompletenessReport,
    SelectionMeta, SelectionStrategy, DEFAULT_EPSILON, IC_RANK_THRESHOLD,
    MAX_ENUMERATION_QUBITS, MAX_IC_QUBITS,
};
pub use dataset::{acquire, write_atomic, MeasurementDataset, Method};
