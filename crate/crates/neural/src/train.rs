//! Single-state reconstruction: the measured statistics are both the network
//! input and the regression target, and the network is fitted to that one
//! instance.

use std::fmt::Write as _;
use std::time::Instant;

use qst_core::{fidelity, DensityMatrix, MeasurementDataset, StateRef};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{NeuralError, Result};
use crate::graph::{Graph, Tensor};
use crate::network::{build_attempt, Network, Role};
use crate::params::{Adam, AdamConfig};
use crate::physical::{density_from_packed, DEGENERATE_TRACE};

/// Re-initializations allowed after a degenerate `Tr(T T^dagger)`.
pub const MAX_REINITS: u64 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EarlyStop {
    pub loss_threshold: f64,
    pub patience: usize,
    /// A loss counts as an improvement only if it beats the best by this much.
    #[serde(default = "default_min_improvement")]
    pub min_improvement: f64,
}

fn default_min_improvement() -> f64 {
    1e-12
}

impl Default for EarlyStop {
    fn default() -> Self {
        Self {
            loss_threshold: 1e-10,
            patience: 200,
            min_improvement: default_min_improvement(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub max_iterations: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub early_stop: EarlyStop,
    pub fidelity_eval_every: usize,
    /// Stop as soon as a logged fidelity reaches this value (needs a truth).
    pub stop_at_fidelity: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            max_iterations: 5000,
            learning_rate: adam.learning_rate,
            adam_beta1: adam.beta1,
            adam_beta2: adam.beta2,
            adam_epsilon: adam.epsilon,
            early_stop: EarlyStop::default(),
            fidelity_eval_every: 10,
            stop_at_fidelity: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            epsilon: self.adam_epsilon,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.adam().validate()?;
        if self.max_iterations == 0 {
            return Err(NeuralError::Config("max_iterations must be positive".into()));
        }
        if self.fidelity_eval_every == 0 {
            return Err(NeuralError::Config("fidelity_eval_every must be positive".into()));
        }
        if self.early_stop.patience == 0 || !(self.early_stop.loss_threshold >= 0.0) || !(self.early_stop.min_improvement >= 0.0) {
            return Err(NeuralError::Config(format!("invalid early_stop {:?}", self.early_stop)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    /// Number of optimizer updates applied before this evaluation.
    pub iteration: usize,
    pub loss: f64,
    pub fidelity: Option<f64>,
    pub elapsed_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    LossThreshold,
    Plateau,
    TargetFidelity,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainTrace {
    pub records: Vec<TraceRecord>,
    pub final_rho: Option<DensityMatrix>,
    pub final_loss: f64,
    pub final_fidelity: Option<f64>,
    pub iterations: usize,
    pub stop_reason: Option<StopReason>,
    /// Early stopping fired (loss threshold, plateau or target fidelity).
    pub converged: bool,
    pub warnings: Vec<String>,
}

impl TrainTrace {
    fn empty() -> Self {
        Self {
            records: Vec::new(),
            final_rho: None,
            final_loss: f64::NAN,
            final_fidelity: None,
            iterations: 0,
            stop_reason: None,
            converged: false,
            warnings: Vec::new(),
        }
    }

    /// `iteration,loss,fidelity,elapsed_ms`; a missing fidelity is empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,loss,fidelity,elapsed_ms\n");
        for r in &self.records {
            let fid = r.fidelity.map(|f| format!("{f:?}")).unwrap_or_default();
            let _ = writeln!(out, "{},{:?},{},{:.3}", r.iteration, r.loss, fid, r.elapsed_ms);
        }
        out
    }

    /// The CSV without the wall-clock column, for reproducibility checks.
    pub fn to_csv_without_timing(&self) -> String {
        self.to_csv()
            .lines()
            .map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// Training aborted part-way; the trace holds everything logged before.
#[derive(Debug)]
pub struct Aborted {
    pub error: NeuralError,
    pub trace: TrainTrace,
}

impl std::fmt::Display for Aborted {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} (after {} iterations)", self.error, self.trace.iterations)
    }
}

impl std::error::Error for Aborted {}

pub fn dataset_sha256(dataset: &MeasurementDataset) -> String {
    hex::encode(Sha256::digest(dataset.to_json().as_bytes()))
}

/// Design choices in effect for a run, recorded next to every trace.
pub fn design_decisions() -> serde_json::Value {
    serde_json::json!({
        "density_parameterization": "rho = T T^dagger / Tr(T T^dagger)",
        "degenerate_trace_threshold": DEGENERATE_TRACE,
        "degenerate_trace_policy": "reinitialize from seed stream",
        "max_reinitializations": MAX_REINITS,
        "leaky_relu_slope": crate::network::LEAKY_SLOPE,
        "dense_bias": "per-layer table defaults unless use_bias is set",
        "conv_transpose": {"kernel": 4, "strides": [2, 1, 1, 1], "bias": false, "channels_at_6_qubits": [64, 64, 32, 2]},
        "instance_norm_epsilon": crate::graph::INSTANCE_NORM_EPS,
        "rnn_input_layout": "sequence of scalars",
        "discriminator_head": "1-unit sigmoid, zero-initialized",
        "initialization": "glorot uniform weights, zero biases",
        "loss": "mean squared error on statistics",
    })
}

/// JSON sidecar describing a run well enough to repeat it.
pub fn sidecar(network: &Network, config: &TrainConfig, dataset: &MeasurementDataset, extra: serde_json::Value) -> serde_json::Value {
    serde_json::json!({
        "network": network.spec,
        "train_config": config,
        "dataset_sha256": dataset_sha256(dataset),
        "design_decisions": design_decisions(),
        "extra": extra,
    })
}

pub(crate) fn check_dataset(network: &Network, dataset: &MeasurementDataset) -> Result<Vec<f64>> {
    if network.spec.role != Role::Reconstruction {
        return Err(NeuralError::Config("a discriminator cannot be trained for reconstruction".into()));
    }
    if dataset.method != network.spec.method {
        return Err(NeuralError::Config(format!(
            "dataset method {:?} does not match network method {:?}",
            dataset.method, network.spec.method
        )));
    }
    if network.bases.as_ref() != Some(&dataset.bases) {
        let same = network
            .bases
            .as_ref()
            .is_some_and(|b| b.n_qubits() == dataset.bases.n_qubits() && b.strings() == dataset.bases.strings());
        if !same {
            return Err(NeuralError::Config("dataset bases differ from the network's bases".into()));
        }
    }
    let target = dataset.target_vector();
    if target.len() != network.spec.input_dim {
        return Err(crate::error::shape_err("dataset", &[target.len()], &[network.spec.input_dim]));
    }
    Ok(target)
}

pub(crate) fn state_fidelity(truth: Option<StateRef<'_>>, rho: &[f64]) -> Result<(DensityMatrix, Option<f64>)> {
    let m = density_from_packed(rho)?;
    let f = match truth {
        Some(t) => Some(fidelity(t, &m)?),
        None => None,
    };
    Ok((m, f))
}

/// Replaces the parameters with a fresh draw after a degenerate trace.
pub(crate) fn reinitialize(network: &mut Network, attempt: u64) -> Result<()> {
    let spec = &network.spec;
    let bases = network
        .bases
        .clone()
        .ok_or_else(|| NeuralError::Config("network has no basis set".into()))?;
    let fresh = build_attempt(spec.architecture, spec.n_qubits, spec.method, &bases, spec.init_seed, attempt, spec.options)?;
    network.params = fresh.params;
    Ok(())
}

/// Trace logging and the end-of-run decision, shared by both loops.
pub(crate) struct Logger<'a> {
    truth: Option<StateRef<'a>>,
    config: TrainConfig,
    start: Instant,
}

impl<'a> Logger<'a> {
    pub(crate) fn new(truth: Option<StateRef<'a>>, config: &TrainConfig) -> Self {
        Self {
            truth,
            config: *config,
            start: Instant::now(),
        }
    }

    /// Records iteration `it` when due; returns true when the run is over.
    pub(crate) fn log(&self, trace: &mut TrainTrace, it: usize, loss: f64, rho: &[f64], mut stop: Option<StopReason>) -> Result<bool> {
        let at_end = stop.is_some() || it == self.config.max_iterations;
        if it % self.config.fidelity_eval_every != 0 && !at_end {
            return Ok(false);
        }
        let (m, fid) = state_fidelity(self.truth, rho)?;
        if let (None, Some(target), Some(f)) = (stop, self.config.stop_at_fidelity, fid) {
            if f >= target {
                stop = Some(StopReason::TargetFidelity);
            }
        }
        trace.records.push(TraceRecord {
            iteration: it,
            loss,
            fidelity: fid,
            elapsed_ms: self.start.elapsed().as_secs_f64() * 1e3,
        });
        if stop.is_none() && it < self.config.max_iterations {
            return Ok(false);
        }
        trace.final_rho = Some(m);
        trace.final_fidelity = fid;
        trace.final_loss = loss;
        trace.iterations = it;
        trace.stop_reason = Some(stop.unwrap_or(StopReason::MaxIterations));
        trace.converged = stop.is_some();
        Ok(true)
    }
}

/// Early-stopping bookkeeping shared by both training loops.
pub(crate) struct Stopper {
    rule: EarlyStop,
    best: f64,
    since: usize,
}

impl Stopper {
    pub(crate) fn new(rule: EarlyStop) -> Self {
        Self {
            rule,
            best: f64::INFINITY,
            since: 0,
        }
    }

    pub(crate) fn observe(&mut self, loss: f64) -> Option<StopReason> {
        if loss < self.rule.loss_threshold {
            return Some(StopReason::LossThreshold);
        }
        if loss < self.best - self.rule.min_improvement {
            self.best = loss;
            self.since = 0;
        } else {
            self.since += 1;
            if self.since >= self.rule.patience {
                return Some(StopReason::Plateau);
            }
        }
        None
    }
}

/// Fits `network` to one dataset. Deterministic for fixed parameters,
/// dataset and config; wall-clock time is recorded but never used.
pub fn train_reconstruction<'a>(
    network: &mut Network,
    dataset: &MeasurementDataset,
    truth: Option<StateRef<'a>>,
    config: &TrainConfig,
) -> std::result::Result<TrainTrace, Aborted> {
    let mut trace = TrainTrace::empty();
    let abort = |error: NeuralError, trace: TrainTrace| Aborted { error, trace };
    if let Err(e) = config.validate() {
        return Err(abort(e, trace));
    }
    let target = match check_dataset(network, dataset) {
        Ok(t) => t,
        Err(e) => return Err(abort(e, trace)),
    };
    let logger = Logger::new(truth, config);
    let mut adam = Adam::new(config.adam(), &network.params);
    let mut stopper = Stopper::new(config.early_stop);
    let mut attempts = 0u64;
    let mut it = 0usize;

    loop {
        // one forward/backward on a fresh tape
        let step = {
            let mut g = Graph::new();
            let x = g.constant(Tensor::row(target.clone()));
            let fwd = match network.forward(&mut g, x, true) {
                Ok(f) => f,
                Err(NeuralError::Degenerate(t)) => {
                    drop(g);
                    attempts += 1;
                    trace
                        .warnings
                        .push(format!("degenerate trace {t:e} at iteration {it}; reinitialized (attempt {attempts})"));
                    if attempts > MAX_REINITS {
                        return Err(abort(NeuralError::Degenerate(t), trace));
                    }
                    if let Err(e) = reinitialize(network, attempts) {
                        return Err(abort(e, trace));
                    }
                    adam = Adam::new(config.adam(), &network.params);
                    stopper = Stopper::new(config.early_stop);
                    continue;
                }
                Err(e) => return Err(abort(e, trace)),
            };
            let stats = fwd.stats.expect("reconstruction network has statistics");
            let loss_var = match g.mse(stats, &target) {
                Ok(l) => l,
                Err(e) => return Err(abort(e, trace)),
            };
            let loss = g.value(loss_var)[0];
            if !loss.is_finite() {
                return Err(abort(NeuralError::NonFiniteLoss(it), trace));
            }
            let rho = g.value(fwd.rho.expect("reconstruction network has rho")).to_vec();
            let stop = stopper.observe(loss);
            match logger.log(&mut trace, it, loss, &rho, stop) {
                Ok(true) => return Ok(trace),
                Ok(false) => {}
                Err(e) => return Err(abort(e, trace)),
            }
            g.backward(loss_var).params()
        };
        if let Err(e) = adam.step(&mut network.params, &step) {
            trace.iterations = it;
            return Err(abort(e, trace));
        }
        it += 1;
    }
}
