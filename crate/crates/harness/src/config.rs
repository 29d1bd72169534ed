//! The experiment config: one strict JSON document. Loading fills every
//! default in, so the resolved document written next to the outputs can be
//! fed back unchanged.

use std::fs;
use std::path::{Path, PathBuf};

use qst_core::measurement::{Alphabet, SelectionStrategy, DEFAULT_EPSILON};
use qst_core::seed::derive_seed;
use qst_core::Method;
use qst_crossbar::CrossbarConfig;
use qst_neural::network::{Architecture, BuildOptions, MAX_NETWORK_QUBITS};
use qst_neural::{CganConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{config_err, HarnessError, Result};

pub const SCHEMA_VERSION: u32 = 1;
pub const RESOLVED_CONFIG: &str = "resolved_config.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateKind {
    Ghz,
    W,
    RandomPure,
    /// Computational basis state `|index>`.
    Basis,
    Werner,
    RandomMixed,
    MaximallyMixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateSpec {
    pub kind: StateKind,
    pub n: usize,
    /// Werner mixing weight.
    #[serde(default)]
    pub p: Option<f64>,
    /// Rank of a random mixture.
    #[serde(default)]
    pub rank: Option<usize>,
    #[serde(default)]
    pub index: Option<usize>,
    /// Seed of random states; derived from the master seed when absent.
    #[serde(default)]
    pub seed: Option<u64>,
}

/// Candidate pool the bases are drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pool {
    /// Every non-identity string of the alphabet.
    All,
    /// Strings with a non-zero expectation on the true state.
    Nonzero,
    /// Strings whose outcome distribution reveals any non-zero expectation.
    Informative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// The whole pool.
    WholePool,
    /// The `bases` list verbatim (a sweep takes prefixes of it).
    Explicit,
    RankedMagnitude,
    RankedInformation,
    GreedyInformation,
    RandomSubset,
}

impl Strategy {
    pub fn selection(self) -> Option<SelectionStrategy> {
        match self {
            Self::RankedMagnitude => Some(SelectionStrategy::RankedMagnitude),
            Self::RankedInformation => Some(SelectionStrategy::RankedInformation),
            Self::GreedyInformation => Some(SelectionStrategy::GreedyInformation),
            Self::RandomSubset => Some(SelectionStrategy::RandomSubset),
            Self::WholePool | Self::Explicit => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasurementSpec {
    pub method: Method,
    /// Defaults: full Pauli for M1, X/Y/Z for M2.
    #[serde(default)]
    pub alphabet: Option<Alphabet>,
    /// Defaults: non-zero for M1, informative for M2.
    #[serde(default)]
    pub pool: Option<Pool>,
    #[serde(default)]
    pub strategy: Option<Strategy>,
    #[serde(default)]
    pub count: Option<usize>,
    #[serde(default)]
    pub bases: Option<Vec<String>>,
    #[serde(default)]
    pub epsilon: Option<f64>,
    /// Finite-shot acquisition; exact statistics when absent.
    #[serde(default)]
    pub shots: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    /// Basis counts, strictly ascending.
    pub grid: Vec<usize>,
    /// Leave the cells after the first success marked as skipped.
    #[serde(default)]
    pub stop_at_first_success: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSpec {
    pub architectures: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub repeats: usize,
    pub state: StateSpec,
    pub measurement: MeasurementSpec,
    #[serde(default = "default_architecture")]
    pub architecture: Architecture,
    #[serde(default)]
    pub build: BuildOptions,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub cgan: CganConfig,
    /// A run converges when its final fidelity reaches this value.
    #[serde(default = "default_target")]
    pub target_fidelity: f64,
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
    #[serde(default)]
    pub bench: Option<BenchSpec>,
    #[serde(default)]
    pub crossbar: Option<CrossbarConfig>,
    /// Completed reconstruction directory read by `crossbar-eval`.
    #[serde(default)]
    pub run_dir: Option<PathBuf>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn one() -> usize {
    1
}

fn default_architecture() -> Architecture {
    Architecture::Fcn
}

fn default_target() -> f64 {
    0.99
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub repeats: Option<usize>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text).map_err(|e| match e {
            HarnessError::Config(msg) => HarnessError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Applies overrides, expands every default and validates. Idempotent.
    pub fn resolve(mut self, overrides: &Overrides) -> Result<Self> {
        if let Some(out) = &overrides.out {
            self.output_dir = Some(out.clone());
        }
        if let Some(seed) = overrides.seed {
            self.seed = seed;
            // a new master seed re-derives the state seed too
            self.state.seed = None;
        }
        if let Some(r) = overrides.repeats {
            self.repeats = r;
        }
        let method = self.measurement.method;
        let m = &mut self.measurement;
        m.alphabet.get_or_insert(match method {
            Method::M1 => Alphabet::FullPauli,
            Method::M2 => Alphabet::XyzOnly,
        });
        m.pool.get_or_insert(match method {
            Method::M1 => Pool::Nonzero,
            Method::M2 => Pool::Informative,
        });
        m.strategy.get_or_insert(if m.bases.is_some() {
            Strategy::Explicit
        } else {
            Strategy::WholePool
        });
        m.epsilon.get_or_insert(DEFAULT_EPSILON);
        if matches!(
            self.state.kind,
            StateKind::RandomPure | StateKind::RandomMixed
        ) && self.state.seed.is_none()
        {
            self.state.seed = Some(derive_seed(self.seed, "state", 0));
        }
        self.train.seed = self.seed;
        self.output_dir.get_or_insert_with(|| PathBuf::from("qst-out"));
        self.validate()?;
        Ok(self)
    }

    /// Field-level checks; every problem found is reported at once.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        let mut bad = |field: &str, msg: String| problems.push(format!("{field}: {msg}"));
        if self.schema_version != SCHEMA_VERSION {
            bad(
                "schema_version",
                format!("expected {SCHEMA_VERSION}, found {}", self.schema_version),
            );
        }
        if self.repeats == 0 {
            bad("repeats", "must be at least 1".into());
        }
        let s = &self.state;
        if s.n == 0 || s.n > MAX_NETWORK_QUBITS {
            bad("state.n", format!("must be in 1..={MAX_NETWORK_QUBITS}, found {}", s.n));
        }
        match s.kind {
            StateKind::Werner => match s.p {
                Some(p) if (0.0..=1.0).contains(&p) => {}
                Some(p) => bad("state.p", format!("must be in [0, 1], found {p}")),
                None => bad("state.p", "required for a werner state".into()),
            },
            StateKind::RandomMixed => match s.rank {
                Some(r) if r >= 1 && s.n < usize::BITS as usize && r <= 1 << s.n => {}
                Some(r) => bad("state.rank", format!("must be in 1..=2^n, found {r}")),
                None => bad("state.rank", "required for a random mixture".into()),
            },
            StateKind::Basis => match s.index {
                Some(i) if s.n < usize::BITS as usize && i < 1 << s.n => {}
                Some(i) => bad("state.index", format!("{i} is out of range")),
                None => bad("state.index", "required for a basis state".into()),
            },
            _ => {}
        }
        let m = &self.measurement;
        if let Some(eps) = m.epsilon {
            if !(eps >= 0.0) {
                bad("measurement.epsilon", "must be non-negative".into());
            }
        }
        if m.shots == Some(0) {
            bad("measurement.shots", "must be positive".into());
        }
        match m.strategy {
            Some(Strategy::Explicit) => match &m.bases {
                None => bad("measurement.bases", "required by the explicit strategy".into()),
                Some(b) if b.is_empty() => bad("measurement.bases", "empty basis set".into()),
                Some(_) => {}
            },
            Some(Strategy::RankedMagnitude | Strategy::RankedInformation | Strategy::GreedyInformation | Strategy::RandomSubset)
                if self.sweep.is_none() =>
            {
                match m.count {
                    None => bad("measurement.count", "required by ranked and random strategies".into()),
                    Some(0) => bad("measurement.count", "empty basis set".into()),
                    Some(_) => {}
                }
            }
            _ => {}
        }
        if m.bases.is_some() && m.strategy != Some(Strategy::Explicit) {
            bad("measurement.bases", "only used by the explicit strategy".into());
        }
        if m.count == Some(0) {
            bad("measurement.count", "empty basis set".into());
        }
        if let Err(e) = self.architecture.ensure_supported() {
            bad("architecture", e.to_string());
        }
        if let Err(e) = self.train.validate() {
            bad("train", e.to_string());
        }
        if !(self.cgan.lambda_mse >= 0.0) || self.cgan.saturation_window == 0 {
            bad("cgan", format!("invalid settings {:?}", self.cgan));
        }
        if !(0.0..=1.0).contains(&self.target_fidelity) {
            bad("target_fidelity", "must be in [0, 1]".into());
        }
        if let Some(sweep) = &self.sweep {
            if sweep.grid.is_empty() {
                bad("sweep.grid", "must not be empty".into());
            } else if sweep.grid.windows(2).any(|w| w[0] >= w[1]) {
                bad("sweep.grid", "must be strictly ascending".into());
            } else if sweep.grid[0] == 0 {
                bad("sweep.grid", "empty basis set".into());
            }
        }
        if let Some(bench) = &self.bench {
            if bench.architectures.is_empty() {
                bad("bench.architectures", "must not be empty".into());
            }
            for a in &bench.architectures {
                match a.parse::<Architecture>() {
                    Ok(arch) => {
                        if let Err(e) = arch.ensure_supported() {
                            bad("bench.architectures", e.to_string());
                        }
                    }
                    Err(e) => bad("bench.architectures", e.to_string()),
                }
            }
        }
        if let Some(xbar) = &self.crossbar {
            if let Err(e) = xbar.validate() {
                bad("crossbar", e.to_string());
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(HarnessError::Config(problems.join("; ")))
        }
    }

    pub fn output_dir(&self) -> &Path {
        self.output_dir.as_deref().unwrap_or(Path::new("qst-out"))
    }

    pub fn bench_architectures(&self) -> Result<Vec<Architecture>> {
        let bench = self
            .bench
            .as_ref()
            .ok_or_else(|| config_err("bench", "required by bench-arch"))?;
        bench
            .architectures
            .iter()
            .map(|a| a.parse::<Architecture>().map_err(|e| config_err("bench.architectures", e)))
            .collect()
    }
}
