use std::collections::HashSet;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{QstError, Result};
use crate::observables::{expectation, outcome_probabilities};
use crate::pauli::{Pauli, PauliString};
use crate::seed;
use crate::state::StateRef;

/// Default threshold below which an exact expectation counts as zero.
pub const DEFAULT_EPSILON: f64 = 1e-9;
/// Largest qubit count for exhaustive enumeration (4^8 strings).
pub const MAX_ENUMERATION_QUBITS: usize = 8;
/// Largest qubit count for the Gram-matrix completeness check.
pub const MAX_IC_QUBITS: usize = 5;
/// Singular values at or below this count as zero in the completeness rank.
pub const IC_RANK_THRESHOLD: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alphabet {
    FullPauli,
    XyzOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionStrategy {
    /// |<s>| descending, seeded tie-break.
    RankedMagnitude,
    /// Total squared expectation revealed by the full outcome distribution of
    /// the basis (every sub-string obtained by replacing letters with `I`),
    /// descending, seeded tie-break. The probability-data analog of
    /// `RankedMagnitude`.
    RankedInformation,
    /// Greedy on new information: each pick maximizes the squared
    /// expectations of sub-strings that no earlier pick already reveals,
    /// seeded tie-break. Avoids stacking bases that repeat what is known.
    GreedyInformation,
    /// Seeded uniform draw without replacement.
    RandomSubset,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionMeta {
    pub strategy: String,
    pub seed: Option<u64>,
    pub epsilon: Option<f64>,
}

/// Ordered, duplicate-free list of measurement bases on `n_qubits`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisSet {
    n_qubits: usize,
    strings: Vec<PauliString>,
    pub selection_meta: SelectionMeta,
}

impl BasisSet {
    pub fn new(n_qubits: usize, strings: Vec<PauliString>) -> Result<Self> {
        let mut seen = HashSet::new();
        for s in &strings {
            if s.n_qubits() != n_qubits {
                return Err(QstError::Dimension(format!(
                    "basis {s} has {} letters, expected {n_qubits}",
                    s.n_qubits()
                )));
            }
            if !seen.insert(s) {
                return Err(QstError::Argument(format!("duplicate basis {s}")));
            }
        }
        Ok(Self {
            n_qubits,
            strings,
            selection_meta: SelectionMeta {
                strategy: "explicit".into(),
                ..SelectionMeta::default()
            },
        })
    }

    /// Parses e.g. `["ZZZ", "XXX"]`.
    pub fn parse(n_qubits: usize, strings: &[&str]) -> Result<Self> {
        let parsed = strings.iter().map(|s| s.parse()).collect::<Result<Vec<PauliString>>>()?;
        Self::new(n_qubits, parsed)
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn strings(&self) -> &[PauliString] {
        &self.strings
    }

    pub fn len(&self) -> usize {
        self.strings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.strings.is_empty()
    }

    fn with_strings(&self, strings: Vec<PauliString>) -> Self {
        Self {
            n_qubits: self.n_qubits,
            strings,
            selection_meta: self.selection_meta.clone(),
        }
    }
}

/// All `4^n` (full) or `3^n` (X/Y/Z only) strings, lexicographic in I < X < Y < Z.
pub fn enumerate_bases(n: usize, alphabet: Alphabet) -> Result<BasisSet> {
    if n == 0 {
        return Err(QstError::Dimension("cannot enumerate bases on 0 qubits".into()));
    }
    if n > MAX_ENUMERATION_QUBITS {
        return Err(QstError::Resource(format!(
            "enumerating bases on {n} qubits exceeds the {MAX_ENUMERATION_QUBITS}-qubit limit"
        )));
    }
    let letters: &[Pauli] = match alphabet {
        Alphabet::FullPauli => &Pauli::ALL,
        Alphabet::XyzOnly => &Pauli::XYZ,
    };
    let base = letters.len();
    let total = base.pow(n as u32);
    let strings = (0..total)
        .map(|mut idx| {
            let mut word = vec![Pauli::I; n];
            for q in (0..n).rev() {
                word[q] = letters[idx % base];
                idx /= base;
            }
            PauliString::new(word).expect("n > 0")
        })
        .collect();
    let mut set = BasisSet::new(n, strings)?;
    set.selection_meta.strategy = match alphabet {
        Alphabet::FullPauli => "enumerate_full_pauli".into(),
        Alphabet::XyzOnly => "enumerate_xyz_only".into(),
    };
    Ok(set)
}

fn check_state<'a>(state: StateRef<'a>, bases: &BasisSet) -> Result<()> {
    if state.n_qubits() != bases.n_qubits() {
        return Err(QstError::Dimension(format!(
            "{}-qubit state against {}-qubit basis set",
            state.n_qubits(),
            bases.n_qubits()
        )));
    }
    Ok(())
}

/// Keeps the strings with `|<s>| > epsilon`, in order. The identity string
/// is always dropped.
pub fn filter_nonzero_expectation<'a>(
    state: impl Into<StateRef<'a>>,
    bases: &BasisSet,
    epsilon: f64,
) -> Result<BasisSet> {
    let state = state.into();
    check_state(state, bases)?;
    let mut kept = Vec::new();
    for s in bases.strings() {
        if !s.is_identity() && expectation(state, s)?.abs() > epsilon {
            kept.push(s.clone());
        }
    }
    let mut out = bases.with_strings(kept);
    out.selection_meta.strategy = "filter_nonzero_expectation".into();
    out.selection_meta.epsilon = Some(epsilon);
    Ok(out)
}

/// Every non-identity sub-string `t` of `s` (letters replaced by `I`) with
/// its expectation `<t>`. These are exactly the expectations recoverable from
/// the outcome distribution of basis `s`.
pub fn revealed_expectations<'a>(state: impl Into<StateRef<'a>>, s: &PauliString) -> Result<Vec<(PauliString, f64)>> {
    let mut f = outcome_probabilities(state, s)?;
    // Walsh-Hadamard transform: f[mask] = sum_a (-1)^{|a & mask|} p_a
    let dim = f.len();
    let mut h = 1;
    while h < dim {
        for i in (0..dim).step_by(2 * h) {
            for j in i..i + h {
                let (a, b) = (f[j], f[j + h]);
                f[j] = a + b;
                f[j + h] = a - b;
            }
        }
        h *= 2;
    }
    let support = s.support_mask();
    Ok((1..dim)
        .filter(|m| m & !support == 0)
        .map(|m| (s.restrict(m), f[m]))
        .collect())
}

/// Sum of `<t>^2` over [`revealed_expectations`] of `s`.
pub fn information_score<'a>(state: impl Into<StateRef<'a>>, s: &PauliString) -> Result<f64> {
    Ok(revealed_expectations(state, s)?.iter().map(|(_, v)| v * v).sum())
}

fn quantized(score: f64) -> i64 {
    // round-off must never break an exact tie
    (score / DEFAULT_EPSILON).round() as i64
}

/// Greedy picks over `pool` (already in tie-break order).
fn greedy_information(state: StateRef<'_>, pool: Vec<PauliString>, k: usize) -> Result<Vec<PauliString>> {
    let mut revealed = Vec::with_capacity(pool.len());
    for s in &pool {
        revealed.push(revealed_expectations(state, s)?);
    }
    let mut known: HashSet<PauliString> = HashSet::new();
    let mut left: Vec<usize> = (0..pool.len()).collect();
    let mut chosen = Vec::with_capacity(k);
    while chosen.len() < k {
        let gain = |i: usize| -> f64 {
            revealed[i]
                .iter()
                .filter(|(t, _)| !known.contains(t))
                .map(|(_, v)| v * v)
                .sum()
        };
        // first maximum in tie-break order
        let (pos, _) = left
            .iter()
            .enumerate()
            .fold((0, i64::MIN), |best, (pos, &i)| {
                let g = quantized(gain(i));
                if g > best.1 {
                    (pos, g)
                } else {
                    best
                }
            });
        let i = left.remove(pos);
        known.extend(revealed[i].iter().map(|(t, _)| t.clone()));
        chosen.push(pool[i].clone());
    }
    Ok(chosen)
}

/// Keeps the strings whose [`information_score`] exceeds `epsilon`; the
/// identity string is always dropped.
pub fn filter_informative<'a>(
    state: impl Into<StateRef<'a>>,
    bases: &BasisSet,
    epsilon: f64,
) -> Result<BasisSet> {
    let state = state.into();
    check_state(state, bases)?;
    let mut kept = Vec::new();
    for s in bases.strings() {
        if !s.is_identity() && information_score(state, s)? > epsilon {
            kept.push(s.clone());
        }
    }
    let mut out = bases.with_strings(kept);
    out.selection_meta.strategy = "filter_informative".into();
    out.selection_meta.epsilon = Some(epsilon);
    Ok(out)
}

/// Chooses `k` strings from `candidates`. Selection is defined over the
/// canonically sorted candidate set, so input order never matters.
pub fn select_bases<'a>(
    candidates: &BasisSet,
    k: usize,
    strategy: SelectionStrategy,
    state: Option<StateRef<'a>>,
    seed: u64,
) -> Result<BasisSet> {
    if k > candidates.len() {
        return Err(QstError::Argument(format!(
            "cannot select {k} bases from {} candidates",
            candidates.len()
        )));
    }
    let mut pool: Vec<PauliString> = candidates.strings().to_vec();
    pool.sort();
    let mut rng = seed::rng_for(seed, "select-bases", 0);
    // seeded permutation doubles as the tie-break order for the ranked strategies
    pool.shuffle(&mut rng);
    let chosen = match strategy {
        SelectionStrategy::RandomSubset => pool.into_iter().take(k).collect(),
        SelectionStrategy::GreedyInformation => {
            let state = state.ok_or_else(|| {
                QstError::Argument(format!("{strategy:?} selection requires a state"))
            })?;
            check_state(state, candidates)?;
            greedy_information(state, pool, k)?
        }
        SelectionStrategy::RankedMagnitude | SelectionStrategy::RankedInformation => {
            let state = state.ok_or_else(|| {
                QstError::Argument(format!("{strategy:?} selection requires a state"))
            })?;
            check_state(state, candidates)?;
            let mut keyed = Vec::with_capacity(pool.len());
            for s in pool {
                let score = match strategy {
                    SelectionStrategy::RankedMagnitude => expectation(state, &s)?.abs(),
                    _ => information_score(state, &s)?,
                };
                keyed.push((quantized(score), s));
            }
            keyed.sort_by(|a, b| b.0.cmp(&a.0));
            keyed.into_iter().take(k).map(|(_, s)| s).collect()
        }
    };
    let mut out = candidates.with_strings(chosen);
    out.selection_meta.strategy = match strategy {
        SelectionStrategy::RankedMagnitude => "ranked_magnitude",
        SelectionStrategy::RankedInformation => "ranked_information",
        SelectionStrategy::GreedyInformation => "greedy_information",
        SelectionStrategy::RandomSubset => "random_subset",
    }
    .into();
    out.selection_meta.seed = Some(seed);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompletenessReport {
    pub complete: bool,
    /// Rank of the Gram matrix of the basis operators plus the identity.
    pub rank: usize,
    /// 4^n
    pub required: usize,
}

/// Rank test of `{I} ∪ {P_s}` against the `4^n`-dimensional operator space,
/// via the normalized Hilbert-Schmidt Gram matrix.
pub fn is_informationally_complete(bases: &BasisSet) -> Result<CompletenessReport> {
    let n = bases.n_qubits();
    if n > MAX_IC_QUBITS {
        return Err(QstError::Resource(format!(
            "completeness check on {n} qubits exceeds the {MAX_IC_QUBITS}-qubit limit"
        )));
    }
    let dim = 1usize << n;
    let mut ops = vec![PauliString::identity(n)];
    ops.extend(bases.strings().iter().cloned());
    let tables: Vec<(usize, Vec<Complex64>)> = ops.iter().map(|s| (s.flip_mask(), s.phases())).collect();
    let m = ops.len();
    let gram = DMatrix::from_fn(m, m, |a, b| {
        let (fa, pa) = &tables[a];
        let (fb, pb) = &tables[b];
        if fa != fb {
            return Complex64::new(0.0, 0.0);
        }
        let tr: Complex64 = pa.iter().zip(pb).map(|(x, y)| x.conj() * y).sum();
        tr / dim as f64
    });
    let rank = SymmetricEigen::new(gram)
        .eigenvalues
        .iter()
        .filter(|&&l| l.abs() > IC_RANK_THRESHOLD)
        .count();
    let required = dim * dim;
    Ok(CompletenessReport {
        complete: rank == required,
        rank,
        required,
    })
}
