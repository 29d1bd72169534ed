use thiserror::Error;

#[derive(Debug, Error)]
pub enum CrossbarError {
    #[error("invalid crossbar configuration: {0}")]
    Config(String),
    #[error("shape error in {op}: expected {expected}, got {got}")]
    Shape {
        op: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("non-finite weight at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("unsupported layer for crossbar lowering: {0}")]
    UnsupportedLayer(String),
    #[error(transparent)]
    Neural(#[from] qst_neural::NeuralError),
    #[error(transparent)]
    Quantum(#[from] qst_core::QstError),
}

pub type Result<T, E = CrossbarError> = std::result::Result<T, E>;
