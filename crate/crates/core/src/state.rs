//! Pure states, density matrices, and the canonical states used throughout
//! the workbench (GHZ, W, Werner, random pure, random mixtures).

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{QstError, Result};
use crate::seed;

/// Dense representations are capped here; 2^12 amplitudes, 2^24 matrix entries.
pub const MAX_QUBITS: usize = 12;

pub(crate) fn check_qubits(n: usize) -> Result<()> {
    if n == 0 || n > MAX_QUBITS {
        return Err(QstError::Dimension(format!(
            "qubit count {n} outside supported range 1..={MAX_QUBITS}"
        )));
    }
    Ok(())
}

fn qubits_for_dim(dim: usize) -> Result<usize> {
    if dim < 2 || !dim.is_power_of_two() {
        return Err(QstError::Dimension(format!(
            "dimension {dim} is not a power of two >= 2"
        )));
    }
    let n = dim.trailing_zeros() as usize;
    check_qubits(n)?;
    Ok(n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PureKind {
    Ghz,
    W,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum MixedKind {
    Werner { p: f64 },
    RandomMixture { rank: usize, seed: u64 },
}

/// Unit-norm amplitude vector over `2^n` computational basis states.
#[derive(Debug, Clone, PartialEq)]
pub struct PureState {
    n_qubits: usize,
    amplitudes: DVector<Complex64>,
}

impl PureState {
    /// Normalizes `amplitudes`; fails on a zero vector or a non power-of-two length.
    pub fn from_amplitudes(amplitudes: Vec<Complex64>) -> Result<Self> {
        let n_qubits = qubits_for_dim(amplitudes.len())?;
        let v = DVector::from_vec(amplitudes);
        let norm = v.norm();
        if !norm.is_finite() || norm < 1e-300 {
            return Err(QstError::Argument("amplitude vector has zero or non-finite norm".into()));
        }
        Ok(Self {
            n_qubits,
            amplitudes: v.unscale(norm),
        })
    }

    /// Computational basis state `|index>`.
    pub fn basis(n: usize, index: usize) -> Result<Self> {
        check_qubits(n)?;
        let dim = 1usize << n;
        if index >= dim {
            return Err(QstError::Argument(format!("basis index {index} >= {dim}")));
        }
        let mut v = vec![Complex64::new(0.0, 0.0); dim];
        v[index] = Complex64::new(1.0, 0.0);
        Self::from_amplitudes(v)
    }

    /// (|0...0> + |1...1>)/sqrt(2)
    pub fn ghz(n: usize) -> Result<Self> {
        check_qubits(n)?;
        let dim = 1usize << n;
        let mut v = vec![Complex64::new(0.0, 0.0); dim];
        v[0] = Complex64::new(1.0, 0.0);
        v[dim - 1] += Complex64::new(1.0, 0.0);
        Self::from_amplitudes(v)
    }

    /// Equal superposition of the `n` single-excitation basis states.
    pub fn w(n: usize) -> Result<Self> {
        check_qubits(n)?;
        let mut v = vec![Complex64::new(0.0, 0.0); 1usize << n];
        for k in 0..n {
            v[1usize << k] = Complex64::new(1.0, 0.0);
        }
        Self::from_amplitudes(v)
    }

    /// Normalized vector of i.i.d. standard complex Gaussians (Haar-uniform).
    pub fn random(n: usize, seed: u64) -> Result<Self> {
        check_qubits(n)?;
        let mut rng = seed::rng_from(seed);
        let v = (0..1usize << n)
            .map(|_| {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                Complex64::new(re, im)
            })
            .collect();
        Self::from_amplitudes(v)
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn amplitudes(&self) -> &DVector<Complex64> {
        &self.amplitudes
    }

    /// <self|other>
    pub fn inner(&self, other: &PureState) -> Result<Complex64> {
        if self.dim() != other.dim() {
            return Err(QstError::Dimension(format!(
                "inner product of {}-qubit and {}-qubit states",
                self.n_qubits, other.n_qubits
            )));
        }
        Ok(self.amplitudes.dotc(&other.amplitudes))
    }

    /// |psi><psi|
    pub fn to_density(&self) -> DensityMatrix {
        DensityMatrix {
            n_qubits: self.n_qubits,
            entries: &self.amplitudes * self.amplitudes.adjoint(),
        }
    }
}

/// `make_pure_state`: builds one of the canonical pure states.
pub fn make_pure_state(kind: PureKind, n: usize, seed: Option<u64>) -> Result<PureState> {
    match kind {
        PureKind::Ghz => PureState::ghz(n),
        PureKind::W => PureState::w(n),
        PureKind::Random => {
            let seed = seed.ok_or_else(|| {
                QstError::Argument("random pure state requires a seed".into())
            })?;
            PureState::random(n, seed)
        }
    }
}

/// Complex `2^n x 2^n` matrix. Physicality is not enforced on construction;
/// see [`crate::validate::validate_density`].
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    n_qubits: usize,
    entries: DMatrix<Complex64>,
}

impl DensityMatrix {
    pub fn from_matrix(entries: DMatrix<Complex64>) -> Result<Self> {
        if entries.nrows() != entries.ncols() {
            return Err(QstError::Dimension(format!(
                "density matrix must be square, got {}x{}",
                entries.nrows(),
                entries.ncols()
            )));
        }
        let n_qubits = qubits_for_dim(entries.nrows())?;
        Ok(Self { n_qubits, entries })
    }

    /// Real diagonal matrix; mostly for tests and examples.
    pub fn diagonal(diag: &[f64]) -> Result<Self> {
        let d = DVector::from_iterator(diag.len(), diag.iter().map(|&x| Complex64::new(x, 0.0)));
        Self::from_matrix(DMatrix::from_diagonal(&d))
    }

    /// I / 2^n
    pub fn maximally_mixed(n: usize) -> Result<Self> {
        check_qubits(n)?;
        let dim = 1usize << n;
        let mut m = DMatrix::identity(dim, dim);
        m.unscale_mut(dim as f64);
        Ok(Self { n_qubits: n, entries: m })
    }

    /// p |GHZ><GHZ| + (1 - p) I / 2^n
    pub fn werner(n: usize, p: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(QstError::Argument(format!("Werner weight p = {p} outside [0, 1]")));
        }
        let ghz = PureState::ghz(n)?.to_density();
        let mixed = Self::maximally_mixed(n)?;
        Ok(Self {
            n_qubits: n,
            entries: ghz.entries * Complex64::new(p, 0.0) + mixed.entries * Complex64::new(1.0 - p, 0.0),
        })
    }

    /// sum_i p_i |psi_i><psi_i| over `rank` random pure states, weights uniform(0,1)
    /// renormalized to sum 1.
    pub fn random_mixture(n: usize, rank: usize, seed: u64) -> Result<Self> {
        check_qubits(n)?;
        let dim = 1usize << n;
        if rank == 0 || rank > dim {
            return Err(QstError::Argument(format!("mixture rank {rank} outside 1..={dim}")));
        }
        let mut wrng = seed::rng_for(seed, "mixture-weights", 0);
        let raw: Vec<f64> = (0..rank).map(|_| wrng.gen_range(f64::EPSILON..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let mut m = DMatrix::from_element(dim, dim, Complex64::new(0.0, 0.0));
        for (i, w) in raw.iter().enumerate() {
            let psi = PureState::random(n, seed::derive_seed(seed, "mixture-component", i as u64))?;
            m += psi.to_density().entries * Complex64::new(w / total, 0.0);
        }
        Ok(Self { n_qubits: n, entries: m })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.entries
    }

    pub fn into_matrix(self) -> DMatrix<Complex64> {
        self.entries
    }

    pub fn trace(&self) -> Complex64 {
        self.entries.trace()
    }
}

/// `make_mixed_state`.
pub fn make_mixed_state(kind: MixedKind, n: usize) -> Result<DensityMatrix> {
    match kind {
        MixedKind::Werner { p } => DensityMatrix::werner(n, p),
        MixedKind::RandomMixture { rank, seed } => DensityMatrix::random_mixture(n, rank, seed),
    }
}

/// Either representation, owned.
#[derive(Debug, Clone, PartialEq)]
pub enum State {
    Pure(PureState),
    Mixed(DensityMatrix),
}

impl State {
    pub fn n_qubits(&self) -> usize {
        self.as_ref().n_qubits()
    }

    pub fn as_ref(&self) -> StateRef<'_> {
        match self {
            State::Pure(p) => StateRef::Pure(p),
            State::Mixed(m) => StateRef::Mixed(m),
        }
    }

    pub fn to_density(&self) -> DensityMatrix {
        match self {
            State::Pure(p) => p.to_density(),
            State::Mixed(m) => m.clone(),
        }
    }
}

impl From<PureState> for State {
    fn from(p: PureState) -> Self {
        State::Pure(p)
    }
}

impl From<DensityMatrix> for State {
    fn from(m: DensityMatrix) -> Self {
        State::Mixed(m)
    }
}

/// Borrowed view over either representation.
#[derive(Debug, Clone, Copy)]
pub enum StateRef<'a> {
    Pure(&'a PureState),
    Mixed(&'a DensityMatrix),
}

impl StateRef<'_> {
    pub fn n_qubits(&self) -> usize {
        match self {
            StateRef::Pure(p) => p.n_qubits(),
            StateRef::Mixed(m) => m.n_qubits(),
        }
    }

    pub fn dim(&self) -> usize {
        1usize << self.n_qubits()
    }
}

impl<'a> From<&'a PureState> for StateRef<'a> {
    fn from(p: &'a PureState) -> Self {
        StateRef::Pure(p)
    }
}

impl<'a> From<&'a DensityMatrix> for StateRef<'a> {
    fn from(m: &'a DensityMatrix) -> Self {
        StateRef::Mixed(m)
    }
}

impl<'a> From<&'a State> for StateRef<'a> {
    fn from(s: &'a State) -> Self {
        s.as_ref()
    }
}

/// On-disk JSON form: `{ "n_qubits", "kind": "pure"|"mixed", "re", "im" }`,
/// matrices flattened row-major.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateDocument {
    pub n_qubits: usize,
    pub kind: String,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl From<&State> for StateDocument {
    fn from(s: &State) -> Self {
        match s {
            State::Pure(p) => StateDocument {
                n_qubits: p.n_qubits(),
                kind: "pure".into(),
                re: p.amplitudes.iter().map(|c| c.re).collect(),
                im: p.amplitudes.iter().map(|c| c.im).collect(),
            },
            State::Mixed(m) => {
                let d = m.dim();
                let rows = (0..d).flat_map(|i| (0..d).map(move |j| (i, j)));
                let (re, im) = rows.map(|ij| (m.entries[ij].re, m.entries[ij].im)).unzip();
                StateDocument {
                    n_qubits: m.n_qubits(),
                    kind: "mixed".into(),
                    re,
                    im,
                }
            }
        }
    }
}

impl TryFrom<StateDocument> for State {
    type Error = QstError;

    fn try_from(doc: StateDocument) -> Result<Self> {
        check_qubits(doc.n_qubits)?;
        let dim = 1usize << doc.n_qubits;
        if doc.re.len() != doc.im.len() {
            return Err(QstError::Parse(format!(
                "field `re` has {} entries but `im` has {}",
                doc.re.len(),
                doc.im.len()
            )));
        }
        let values: Vec<Complex64> = doc.re.iter().zip(&doc.im).map(|(&r, &i)| Complex64::new(r, i)).collect();
        match doc.kind.as_str() {
            "pure" => {
                if values.len() != dim {
                    return Err(QstError::Parse(format!(
                        "pure state on {} qubits needs {dim} amplitudes, found {}",
                        doc.n_qubits,
                        values.len()
                    )));
                }
                // Stored amplitudes are already normalized; keep them bit-exact.
                Ok(State::Pure(PureState {
                    n_qubits: doc.n_qubits,
                    amplitudes: DVector::from_vec(values),
                }))
            }
            "mixed" => {
                if values.len() != dim * dim {
                    return Err(QstError::Parse(format!(
                        "density matrix on {} qubits needs {} entries, found {}",
                        doc.n_qubits,
                        dim * dim,
                        values.len()
                    )));
                }
                Ok(State::Mixed(DensityMatrix {
                    n_qubits: doc.n_qubits,
                    entries: DMatrix::from_row_slice(dim, dim, &values),
                }))
            }
            other => Err(QstError::Parse(format!("unknown state kind {other:?}"))),
        }
    }
}

impl State {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&StateDocument::from(self)).expect("state document serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: StateDocument = serde_json::from_str(text)
            .map_err(|e| QstError::Parse(format!("line {} column {}: {e}", e.line(), e.column())))?;
        State::try_from(doc)
    }
}
