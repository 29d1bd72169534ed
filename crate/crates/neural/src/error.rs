use thiserror::Error;

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("shape error in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("degenerate parameters: Tr(T T^dagger) = {0:e}")]
    Degenerate(f64),
    #[error("non-finite gradient in parameter `{0}`")]
    Divergence(String),
    #[error("non-finite loss at iteration {0}")]
    NonFiniteLoss(usize),
    #[error("architecture {0} is out of scope: its training procedure is not specified in enough detail to implement")]
    OutOfScope(String),
    #[error("linear backend failed: {0}")]
    Backend(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Quantum(#[from] qst_core::QstError),
}

pub type Result<T, E = NeuralError> = std::result::Result<T, E>;

pub(crate) fn shape_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> NeuralError {
    NeuralError::Shape {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}
