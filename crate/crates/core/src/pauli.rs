//! Pauli strings and the operators they name.
//!
//! Qubit ordering: the leftmost letter acts on the most-significant bit of the
//! computational-basis index, which matches a left-to-right Kronecker product.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{QstError, Result};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Pauli {
    I,
    X,
    Y,
    Z,
}

impl Pauli {
    pub const ALL: [Pauli; 4] = [Pauli::I, Pauli::X, Pauli::Y, Pauli::Z];
    pub const XYZ: [Pauli; 3] = [Pauli::X, Pauli::Y, Pauli::Z];

    pub fn symbol(self) -> char {
        match self {
            Pauli::I => 'I',
            Pauli::X => 'X',
            Pauli::Y => 'Y',
            Pauli::Z => 'Z',
        }
    }

    pub fn from_symbol(c: char) -> Result<Self> {
        match c {
            'I' => Ok(Pauli::I),
            'X' => Ok(Pauli::X),
            'Y' => Ok(Pauli::Y),
            'Z' => Ok(Pauli::Z),
            other => Err(QstError::Parse(format!(
                "invalid Pauli letter {other:?} (expected one of I, X, Y, Z)"
            ))),
        }
    }

    /// 2x2 matrix, row-major.
    pub fn matrix(self) -> [[Complex64; 2]; 2] {
        match self {
            Pauli::I => [[ONE, ZERO], [ZERO, ONE]],
            Pauli::X => [[ZERO, ONE], [ONE, ZERO]],
            Pauli::Y => [[ZERO, -I], [I, ZERO]],
            Pauli::Z => [[ONE, ZERO], [ZERO, -ONE]],
        }
    }

    /// Rows are the bra eigenvectors of the measurement basis: row 0 is the
    /// +1 eigenvector (outcome bit 0), row 1 the -1 eigenvector (bit 1).
    /// `I` is measured in the Z eigenbasis.
    pub fn basis_change(self) -> [[Complex64; 2]; 2] {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        match self {
            Pauli::I | Pauli::Z => [[ONE, ZERO], [ZERO, ONE]],
            Pauli::X => [
                [Complex64::new(h, 0.0), Complex64::new(h, 0.0)],
                [Complex64::new(h, 0.0), Complex64::new(-h, 0.0)],
            ],
            Pauli::Y => [
                [Complex64::new(h, 0.0), Complex64::new(0.0, -h)],
                [Complex64::new(h, 0.0), Complex64::new(0.0, h)],
            ],
        }
    }
}

/// A word over {I, X, Y, Z}.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PauliString(Vec<Pauli>);

impl PauliString {
    pub fn new(letters: Vec<Pauli>) -> Result<Self> {
        if letters.is_empty() {
            return Err(QstError::Parse("empty Pauli string".into()));
        }
        Ok(Self(letters))
    }

    pub fn identity(n: usize) -> Self {
        Self(vec![Pauli::I; n])
    }

    /// Uniform string such as `ZZZ` or `XXX`.
    pub fn uniform(letter: Pauli, n: usize) -> Self {
        Self(vec![letter; n])
    }

    pub fn letters(&self) -> &[Pauli] {
        &self.0
    }

    pub fn n_qubits(&self) -> usize {
        self.0.len()
    }

    pub fn is_identity(&self) -> bool {
        self.0.iter().all(|&p| p == Pauli::I)
    }

    /// Letter acting on bit `bit` of the basis index (bit 0 = least significant).
    fn letter_on_bit(&self, bit: usize) -> Pauli {
        self.0[self.0.len() - 1 - bit]
    }

    /// Bits flipped by the operator (X and Y letters).
    pub fn flip_mask(&self) -> usize {
        self.0.iter().fold(0usize, |m, &p| {
            (m << 1) | usize::from(matches!(p, Pauli::X | Pauli::Y))
        })
    }

    /// Bits whose letter is not `I`; these contribute to the eigenvalue sign.
    pub fn support_mask(&self) -> usize {
        self.0
            .iter()
            .fold(0usize, |m, &p| (m << 1) | usize::from(p != Pauli::I))
    }

    /// Phase picked up by basis state `j`: `P|j> = phase(j) |j ^ flip_mask>`.
    pub fn phase(&self, j: usize) -> Complex64 {
        let mut ph = ONE;
        for bit in 0..self.0.len() {
            let set = (j >> bit) & 1 == 1;
            match self.letter_on_bit(bit) {
                Pauli::I | Pauli::X => {}
                Pauli::Y => ph *= if set { -I } else { I },
                Pauli::Z => {
                    if set {
                        ph = -ph
                    }
                }
            }
        }
        ph
    }

    /// Phase table for all `2^n` basis states.
    pub fn phases(&self) -> Vec<Complex64> {
        (0..1usize << self.0.len()).map(|j| self.phase(j)).collect()
    }

    /// Eigenvalue (+1 or -1) attached to measurement outcome `a`.
    pub fn outcome_sign(&self, a: usize) -> f64 {
        if (a & self.support_mask()).count_ones() % 2 == 0 {
            1.0
        } else {
            -1.0
        }
    }

    /// Dense Kronecker product of the single-qubit matrices, left to right.
    pub fn operator(&self) -> Operator {
        let dim = 1usize << self.0.len();
        let flip = self.flip_mask();
        let mut m = DMatrix::from_element(dim, dim, ZERO);
        for j in 0..dim {
            m[(j ^ flip, j)] = self.phase(j);
        }
        Operator(m)
    }

    /// Same string with the letters at `keep` retained and the rest set to `I`.
    pub fn restrict(&self, keep: usize) -> PauliString {
        let n = self.0.len();
        PauliString(
            self.0
                .iter()
                .enumerate()
                .map(|(q, &p)| if (keep >> (n - 1 - q)) & 1 == 1 { p } else { Pauli::I })
                .collect(),
        )
    }
}

impl fmt::Display for PauliString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in &self.0 {
            write!(f, "{}", p.symbol())?;
        }
        Ok(())
    }
}

impl FromStr for PauliString {
    type Err = QstError;

    fn from_str(s: &str) -> Result<Self> {
        let letters = s.chars().map(Pauli::from_symbol).collect::<Result<Vec<_>>>()?;
        PauliString::new(letters)
    }
}

impl Serialize for PauliString {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PauliString {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Dense complex operator on `n` qubits.
#[derive(Debug, Clone, PartialEq)]
pub struct Operator(pub DMatrix<Complex64>);

impl Operator {
    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.0
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        let m = &self.0;
        (0..m.nrows()).all(|i| (0..m.ncols()).all(|j| (m[(i, j)] - m[(j, i)].conj()).norm() <= tol))
    }
}

/// Applies the 2x2 matrix `u` to qubit `bit` (0 = least significant) of a
/// strided vector view `v[offset + k*stride]`, `k < 2^n`.
pub(crate) fn apply_single_qubit(
    v: &mut [Complex64],
    n: usize,
    bit: usize,
    u: &[[Complex64; 2]; 2],
    offset: usize,
    stride: usize,
) {
    let dim = 1usize << n;
    let step = 1usize << bit;
    for base in 0..dim {
        if base & step != 0 {
            continue;
        }
        let i0 = offset + base * stride;
        let i1 = offset + (base | step) * stride;
        let (a, b) = (v[i0], v[i1]);
        v[i0] = u[0][0] * a + u[0][1] * b;
        v[i1] = u[1][0] * a + u[1][1] * b;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    #[test]
    fn z_is_diag_one_minus_one() {
        let op = "Z".parse::<PauliString>().unwrap().operator();
        assert_eq!(op.0[(0, 0)], c(1.0));
        assert_eq!(op.0[(1, 1)], c(-1.0));
        assert_eq!(op.0[(0, 1)], c(0.0));
    }

    #[test]
    fn zz_is_diag_pm() {
        let op = "ZZ".parse::<PauliString>().unwrap().operator();
        let d: Vec<f64> = (0..4).map(|i| op.0[(i, i)].re).collect();
        assert_eq!(d, vec![1.0, -1.0, -1.0, 1.0]);
    }

    #[test]
    fn xi_has_expected_ones() {
        let op = "XI".parse::<PauliString>().unwrap().operator();
        for i in 0..4 {
            for j in 0..4 {
                let expect = matches!((i, j), (0, 2) | (1, 3) | (2, 0) | (3, 1));
                assert_eq!(op.0[(i, j)], c(if expect { 1.0 } else { 0.0 }), "({i},{j})");
            }
        }
    }

    #[test]
    fn sparse_form_matches_explicit_kronecker() {
        for s in ["XY", "YZ", "ZYX", "IYI", "YYX"] {
            let ps: PauliString = s.parse().unwrap();
            let mut dense = DMatrix::from_element(1, 1, ONE);
            for &p in ps.letters() {
                let m = p.matrix();
                let small = DMatrix::from_fn(2, 2, |i, j| m[i][j]);
                dense = dense.kronecker(&small);
            }
            assert_eq!(dense, ps.operator().0, "{s}");
            assert!(ps.operator().is_hermitian(0.0));
        }
    }

    #[test]
    fn rejects_bad_letters_and_empty() {
        assert!(matches!("XQ".parse::<PauliString>(), Err(QstError::Parse(_))));
        assert!(matches!("".parse::<PauliString>(), Err(QstError::Parse(_))));
        assert!("xz".parse::<PauliString>().is_err());
    }

    #[test]
    fn restrict_keeps_selected_positions() {
        let s: PauliString = "XYZ".parse().unwrap();
        assert_eq!(s.restrict(0b101).to_string(), "XIZ");
        assert_eq!(s.restrict(0).to_string(), "III");
    }
}
