use std::collections::BTreeMap;

use qst_core::seed::rng_for;
use qst_core::{fidelity, MeasurementDataset, StateRef};
use qst_neural::network::{FloatBackend, LayerSpec, LinearBackend, Network, Role};
use qst_neural::{density_from_packed, NeuralError};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::array::{analog_mvm, program_weights, ProgrammedCrossbar};
use crate::config::CrossbarConfig;
use crate::error::{CrossbarError, Result};

/// Largest system whose transpose convolutions are lowered to dense arrays.
pub const MAX_LOWERING_QUBITS: usize = 4;

/// Routes every matrix product of inference through programmed arrays.
/// Arrays are programmed on first use of each weight and reused afterwards.
pub struct CrossbarBackend {
    config: CrossbarConfig,
    arrays: BTreeMap<String, ProgrammedCrossbar>,
    rng: ChaCha8Rng,
    reads: u64,
}

impl CrossbarBackend {
    pub fn new(config: CrossbarConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            arrays: BTreeMap::new(),
            rng: rng_for(config.seed, "read-noise", 0),
            reads: 0,
        })
    }

    /// Restarts the noise stream for repeat `index`.
    pub fn reseed(&mut self, index: u64) {
        self.rng = rng_for(self.config.seed, "read-noise", index);
    }

    pub fn tiles(&self) -> usize {
        self.arrays.values().map(|a| a.tile_map.len()).sum()
    }

    /// Tile reads so far; one matrix-vector product reads every tile once.
    pub fn reads(&self) -> u64 {
        self.reads
    }

    pub fn arrays(&self) -> &BTreeMap<String, ProgrammedCrossbar> {
        &self.arrays
    }
}

impl LinearBackend for CrossbarBackend {
    fn matvec(&mut self, key: &str, w: &[f64], n_in: usize, n_out: usize, x: &[f64]) -> qst_neural::Result<Vec<f64>> {
        if !self.arrays.contains_key(key) {
            let programmed =
                program_weights(w, n_in, n_out, &self.config).map_err(|e| NeuralError::Backend(e.to_string()))?;
            self.arrays.insert(key.to_string(), programmed);
        }
        let xbar = &self.arrays[key];
        self.reads += xbar.tile_map.len() as u64;
        analog_mvm(xbar, x, &mut self.rng).map_err(|e| NeuralError::Backend(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegradationReport {
    pub config: CrossbarConfig,
    pub repeats: usize,
    pub fidelity_float: f64,
    pub fidelity_mean: f64,
    pub fidelity_std: f64,
    /// `fidelity_float - fidelity_mean`
    pub delta: f64,
    pub tiles: usize,
    /// Tile reads summed over all repeats.
    pub mvm_reads: u64,
}

fn check_lowerable(network: &Network) -> Result<()> {
    if network.spec.role != Role::Reconstruction {
        return Err(CrossbarError::UnsupportedLayer(
            "only reconstruction networks produce a state to evaluate".into(),
        ));
    }
    for layer in &network.spec.layers {
        if let LayerSpec::ConvTranspose2d { .. } = layer {
            if network.spec.n_qubits > MAX_LOWERING_QUBITS {
                return Err(CrossbarError::UnsupportedLayer(format!(
                    "Conv2DTranspose at {} qubits exceeds the {MAX_LOWERING_QUBITS}-qubit lowering budget",
                    network.spec.n_qubits
                )));
            }
        }
    }
    Ok(())
}

fn state_fidelity(truth: StateRef<'_>, rho: Option<Vec<f64>>) -> Result<f64> {
    let rho = rho.ok_or_else(|| CrossbarError::UnsupportedLayer("network has no density-matrix layer".into()))?;
    Ok(fidelity(truth, &density_from_packed(&rho)?)?)
}

/// Replays inference on the crossbar `repeats` times with independent noise
/// draws; activations and the physical layers stay in floating point.
pub fn run_network_on_crossbar(
    network: &Network,
    dataset: &MeasurementDataset,
    config: &CrossbarConfig,
    truth: StateRef<'_>,
    repeats: usize,
) -> Result<DegradationReport> {
    config.validate()?;
    if repeats == 0 {
        return Err(CrossbarError::Config("repeats must be at least 1".into()));
    }
    check_lowerable(network)?;
    if dataset.method != network.spec.method {
        return Err(CrossbarError::Config("dataset method differs from the network's".into()));
    }
    let input = dataset.target_vector();
    let float = network.infer(&input, &mut FloatBackend)?;
    let fidelity_float = state_fidelity(truth, float.rho)?;

    let mut backend = CrossbarBackend::new(*config)?;
    let mut fids = Vec::with_capacity(repeats);
    for r in 0..repeats {
        backend.reseed(r as u64);
        let out = network.infer(&input, &mut backend)?;
        fids.push(state_fidelity(truth, out.rho)?);
    }
    let mean = fids.iter().sum::<f64>() / repeats as f64;
    let std = if repeats > 1 {
        (fids.iter().map(|f| (f - mean) * (f - mean)).sum::<f64>() / (repeats - 1) as f64).sqrt()
    } else {
        0.0
    };
    Ok(DegradationReport {
        config: *config,
        repeats,
        fidelity_float,
        fidelity_mean: mean,
        fidelity_std: std,
        delta: fidelity_float - mean,
        tiles: backend.tiles(),
        mvm_reads: backend.reads(),
    })
}
