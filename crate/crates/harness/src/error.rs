use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    /// A config problem, prefixed with the offending field path.
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("missing artifact {0}")]
    MissingArtifact(String),
    #[error(transparent)]
    Quantum(#[from] qst_core::QstError),
    #[error(transparent)]
    Neural(#[from] qst_neural::NeuralError),
    #[error(transparent)]
    Training(#[from] qst_neural::Aborted),
    #[error(transparent)]
    Crossbar(#[from] qst_crossbar::CrossbarError),
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

pub(crate) fn config_err(field: &str, msg: impl std::fmt::Display) -> HarnessError {
    HarnessError::Config(format!("{field}: {msg}"))
}
