//! Neural-network quantum state tomography: a small reverse-mode autodiff
//! engine, the FCN/CNN/CGAN/RNN builders, the physicality-enforcing output
//! layers and the single-state training loops.

pub mod cgan;
pub mod error;
pub mod graph;
pub mod network;
pub mod params;
pub mod physical;
pub mod train;

pub use cgan::{probe, train_cgan, CganConfig, DiscriminatorProbe};
pub use error::{NeuralError, Result};
pub use graph::{ConvGeometry, Graph, ParamId, Tensor, Var};
pub use network::{
    build_discriminator, build_network, Architecture, BuildOptions, FloatBackend, Inference, LayerSpec,
    LinearBackend, Network, NetworkSpec,
};
pub use params::{Adam, AdamConfig, ParamStore};
pub use physical::{density_from_packed, StatisticsPlan};
pub use train::{
    dataset_sha256, design_decisions, sidecar, train_reconstruction, Aborted, EarlyStop, StopReason, TraceRecord,
    TrainConfig, TrainTrace,
};
