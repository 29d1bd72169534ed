use std::fs;
use std::io::Write;
use std::path::Path;

use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{QstError, Result};
use crate::measurement::basis::{BasisSet, SelectionMeta};
use crate::observables::{expectation, outcome_probabilities};
use crate::pauli::PauliString;
use crate::seed;
use crate::state::StateRef;

/// How measurement data is acquired per basis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    /// One expectation value per basis.
    M1,
    /// The full outcome distribution per basis.
    M2,
}

/// Exact statistics for a set of bases, optionally with finite-shot counts.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementDataset {
    pub method: Method,
    pub bases: BasisSet,
    pub shots: Option<u64>,
    /// Exact expectation values (M1), one per basis.
    pub values: Vec<f64>,
    /// Exact outcome distributions (M2), `|M| x 2^N`.
    pub distributions: Vec<Vec<f64>>,
    /// Sampled outcome counts, `|M| x 2^N`; each row sums to `shots`.
    pub counts: Option<Vec<Vec<u64>>>,
}

impl MeasurementDataset {
    pub fn n_qubits(&self) -> usize {
        self.bases.n_qubits()
    }

    /// Empirical expectation per basis from counts (mean of the +-1 eigenvalue).
    pub fn empirical_values(&self) -> Option<Vec<f64>> {
        let counts = self.counts.as_ref()?;
        let shots = self.shots? as f64;
        Some(
            self.bases
                .strings()
                .iter()
                .zip(counts)
                .map(|(s, row)| {
                    row.iter()
                        .enumerate()
                        .map(|(a, &c)| s.outcome_sign(a) * c as f64)
                        .sum::<f64>()
                        / shots
                })
                .collect(),
        )
    }

    /// Empirical outcome frequencies from counts.
    pub fn empirical_distributions(&self) -> Option<Vec<Vec<f64>>> {
        let counts = self.counts.as_ref()?;
        let shots = self.shots? as f64;
        Some(
            counts
                .iter()
                .map(|row| row.iter().map(|&c| c as f64 / shots).collect())
                .collect(),
        )
    }

    /// Statistics vector a network is fitted against: expectation values (M1)
    /// or basis-major flattened distributions (M2); empirical when sampled.
    pub fn target_vector(&self) -> Vec<f64> {
        match self.method {
            Method::M1 => self.empirical_values().unwrap_or_else(|| self.values.clone()),
            Method::M2 => self
                .empirical_distributions()
                .unwrap_or_else(|| self.distributions.clone())
                .concat(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&DatasetDocument::from(self)).expect("dataset serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: DatasetDocument = serde_json::from_str(text)
            .map_err(|e| QstError::Parse(format!("line {} column {}: {e}", e.line(), e.column())))?;
        doc.try_into()
    }

    /// Writes to a temporary sibling then renames over `path`.
    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json().as_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| match e {
            QstError::Parse(msg) => QstError::Parse(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}

/// Temp-file-then-rename write.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| QstError::Argument(format!("{} has no file name", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp-{}", name.to_string_lossy(), std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// `acquire`: exact statistics, plus multinomial counts when `shots` is set.
/// Each basis draws from its own sub-seed `(seed, "acquire", index)`.
pub fn acquire<'a>(
    method: Method,
    state: impl Into<StateRef<'a>>,
    bases: &BasisSet,
    shots: Option<u64>,
    seed: Option<u64>,
) -> Result<MeasurementDataset> {
    let state = state.into();
    if bases.is_empty() {
        return Err(QstError::Argument("empty basis set".into()));
    }
    if state.n_qubits() != bases.n_qubits() {
        return Err(QstError::Dimension(format!(
            "{}-qubit state against {}-qubit basis set",
            state.n_qubits(),
            bases.n_qubits()
        )));
    }
    let sample_seed = match (shots, seed) {
        (Some(0), _) => return Err(QstError::Argument("shots must be positive".into())),
        (Some(_), None) => return Err(QstError::Argument("sampled acquisition requires a seed".into())),
        (Some(_), Some(s)) => Some(s),
        (None, _) => None,
    };
    let probs: Vec<Vec<f64>> = bases
        .strings()
        .iter()
        .map(|s| outcome_probabilities(state, s))
        .collect::<Result<_>>()?;
    let (values, distributions) = match method {
        Method::M1 => (
            bases
                .strings()
                .iter()
                .map(|s| expectation(state, s))
                .collect::<Result<Vec<_>>>()?,
            Vec::new(),
        ),
        Method::M2 => (Vec::new(), probs.clone()),
    };
    let counts = match (shots, sample_seed) {
        (Some(shots), Some(seed)) => Some(
            probs
                .iter()
                .enumerate()
                .map(|(i, p)| sample_counts(p, shots, seed::derive_seed(seed, "acquire", i as u64)))
                .collect::<Result<Vec<_>>>()?,
        ),
        _ => None,
    };
    Ok(MeasurementDataset {
        method,
        bases: bases.clone(),
        shots,
        values,
        distributions,
        counts,
    })
}

/// Multinomial draw as a chain of conditional binomials.
fn sample_counts(p: &[f64], shots: u64, seed: u64) -> Result<Vec<u64>> {
    let mut rng = seed::rng_from(seed);
    let mut remaining = shots;
    let mut mass = 1.0f64;
    let mut out = vec![0u64; p.len()];
    for (a, &pa) in p.iter().enumerate() {
        if remaining == 0 {
            break;
        }
        let pa = pa.max(0.0);
        if a + 1 == p.len() || mass <= 0.0 {
            out[a] = remaining;
            break;
        }
        let q = (pa / mass).clamp(0.0, 1.0);
        let draw = Binomial::new(remaining, q)
            .map_err(|e| QstError::Numeric(format!("binomial({remaining}, {q}): {e}")))?
            .sample(&mut rng);
        out[a] = draw;
        remaining -= draw;
        mass -= pa;
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetDocument {
    method: Method,
    n_qubits: usize,
    bases: Vec<PauliString>,
    shots: Option<u64>,
    values: Vec<f64>,
    distributions: Vec<Vec<f64>>,
    counts: Option<Vec<Vec<u64>>>,
    selection_meta: SelectionMeta,
}

impl From<&MeasurementDataset> for DatasetDocument {
    fn from(d: &MeasurementDataset) -> Self {
        DatasetDocument {
            method: d.method,
            n_qubits: d.n_qubits(),
            bases: d.bases.strings().to_vec(),
            shots: d.shots,
            values: d.values.clone(),
            distributions: d.distributions.clone(),
            counts: d.counts.clone(),
            selection_meta: d.bases.selection_meta.clone(),
        }
    }
}

impl TryFrom<DatasetDocument> for MeasurementDataset {
    type Error = QstError;

    fn try_from(doc: DatasetDocument) -> Result<Self> {
        let m = doc.bases.len();
        let outcomes = 1usize << doc.n_qubits.min(30);
        let mut bases = BasisSet::new(doc.n_qubits, doc.bases)
            .map_err(|e| QstError::Parse(format!("field `bases`: {e}")))?;
        bases.selection_meta = doc.selection_meta;
        let check_rows = |field: &str, rows: usize, widths: &mut dyn Iterator<Item = usize>| -> Result<()> {
            if rows != m {
                return Err(QstError::Parse(format!("field `{field}` has {rows} rows, expected {m}")));
            }
            if let Some((i, w)) = widths.enumerate().find(|&(_, w)| w != outcomes) {
                return Err(QstError::Parse(format!(
                    "field `{field}` row {i} has {w} entries, expected {outcomes}"
                )));
            }
            Ok(())
        };
        match doc.method {
            Method::M1 => {
                if doc.values.len() != m {
                    return Err(QstError::Parse(format!(
                        "field `values` has {} entries, expected {m}",
                        doc.values.len()
                    )));
                }
                if let Some(v) = doc.values.iter().find(|v| !(-1.0..=1.0).contains(*v)) {
                    return Err(QstError::Parse(format!("field `values` entry {v} outside [-1, 1]")));
                }
            }
            Method::M2 => {
                check_rows("distributions", doc.distributions.len(), &mut doc.distributions.iter().map(Vec::len))?
            }
        }
        if let Some(counts) = &doc.counts {
            check_rows("counts", counts.len(), &mut counts.iter().map(Vec::len))?;
            let shots = doc
                .shots
                .ok_or_else(|| QstError::Parse("field `counts` present but `shots` is null".into()))?;
            if let Some((i, _)) = counts.iter().enumerate().find(|(_, r)| r.iter().sum::<u64>() != shots) {
                return Err(QstError::Parse(format!("field `counts` row {i} does not sum to shots = {shots}")));
            }
        }
        Ok(MeasurementDataset {
            method: doc.method,
            bases,
            shots: doc.shots,
            values: doc.values,
            distributions: doc.distributions,
            counts: doc.counts,
        })
    }
}
