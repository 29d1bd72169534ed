//! Pauli expectation values, basis-outcome probabilities and purity.

use num_complex::Complex64;

use crate::error::{QstError, Result};
use crate::pauli::{apply_single_qubit, PauliString};
use crate::state::{DensityMatrix, StateRef};
use crate::validate::validate_density;

/// Largest imaginary part tolerated on a quantity that must be real.
pub const IMAG_TOLERANCE: f64 = 1e-10;

fn check_len(state: StateRef<'_>, s: &PauliString) -> Result<()> {
    if s.n_qubits() != state.n_qubits() {
        return Err(QstError::Dimension(format!(
            "Pauli string {s} has {} letters but the state has {} qubits",
            s.n_qubits(),
            state.n_qubits()
        )));
    }
    Ok(())
}

/// `<psi|P|psi>` for a pure state, `Tr(rho P)` for a density matrix.
pub fn expectation<'a>(state: impl Into<StateRef<'a>>, s: &PauliString) -> Result<f64> {
    let state = state.into();
    check_len(state, s)?;
    let flip = s.flip_mask();
    let value: Complex64 = match state {
        StateRef::Pure(p) => {
            let a = p.amplitudes();
            (0..p.dim()).map(|j| a[j ^ flip].conj() * s.phase(j) * a[j]).sum()
        }
        StateRef::Mixed(m) => {
            let rho = m.matrix();
            (0..m.dim()).map(|j| rho[(j, j ^ flip)] * s.phase(j)).sum()
        }
    };
    if value.im.abs() > IMAG_TOLERANCE {
        return Err(QstError::Numeric(format!(
            "expectation of {s} has imaginary residue {:e}",
            value.im
        )));
    }
    Ok(value.re)
}

/// Probability of each joint eigenvector of `s`. Outcome index bit `k`
/// (most-significant first, matching the string) is 0 for the +1 local
/// eigenvector and 1 for the -1 one; `I` letters use the Z eigenbasis.
pub fn outcome_probabilities<'a>(state: impl Into<StateRef<'a>>, s: &PauliString) -> Result<Vec<f64>> {
    let state = state.into();
    check_len(state, s)?;
    let n = s.n_qubits();
    let dim = 1usize << n;
    let probs = match state {
        StateRef::Pure(p) => {
            let mut v: Vec<Complex64> = p.amplitudes().iter().copied().collect();
            for (q, letter) in s.letters().iter().enumerate() {
                apply_single_qubit(&mut v, n, n - 1 - q, &letter.basis_change(), 0, 1);
            }
            v.iter().map(|c| c.norm_sqr()).collect()
        }
        StateRef::Mixed(m) => rotated_diagonal(m, s),
    };
    debug_assert_eq!(probs.len(), dim);
    Ok(probs)
}

/// diag(U rho U^dagger) with U the local basis change of `s`.
fn rotated_diagonal(m: &DensityMatrix, s: &PauliString) -> Vec<f64> {
    let n = s.n_qubits();
    let dim = m.dim();
    // nalgebra storage is column-major: element (i, j) lives at i + j*dim.
    let mut buf: Vec<Complex64> = m.matrix().as_slice().to_vec();
    for (q, letter) in s.letters().iter().enumerate() {
        let u = letter.basis_change();
        let uc = [
            [u[0][0].conj(), u[0][1].conj()],
            [u[1][0].conj(), u[1][1].conj()],
        ];
        let bit = n - 1 - q;
        for col in 0..dim {
            apply_single_qubit(&mut buf, n, bit, &u, col * dim, 1);
        }
        for row in 0..dim {
            apply_single_qubit(&mut buf, n, bit, &uc, row, dim);
        }
    }
    (0..dim).map(|a| buf[a + a * dim].re).collect()
}

/// Tr(rho^2).
pub fn purity(rho: &DensityMatrix) -> Result<f64> {
    let report = validate_density(rho);
    if !report.pass {
        return Err(QstError::Validation(report.to_string()));
    }
    let m = rho.matrix();
    let d = m.nrows();
    let value: Complex64 = (0..d)
        .flat_map(|i| (0..d).map(move |j| (i, j)))
        .map(|(i, j)| m[(i, j)] * m[(j, i)])
        .sum();
    if value.im.abs() > IMAG_TOLERANCE {
        return Err(QstError::Numeric(format!("purity has imaginary residue {:e}", value.im)));
    }
    Ok(value.re)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pauli::Operator;
    use crate::state::PureState;
    use nalgebra::DMatrix;

    fn ps(s: &str) -> PauliString {
        s.parse().unwrap()
    }

    #[test]
    fn ghz3_examples() {
        let g = PureState::ghz(3).unwrap();
        assert!((expectation(&g, &ps("XXX")).unwrap() - 1.0).abs() < 1e-12);
        assert!(expectation(&g, &ps("ZZZ")).unwrap().abs() < 1e-12);
        let p = outcome_probabilities(&g, &ps("ZZZ")).unwrap();
        for (a, v) in p.iter().enumerate() {
            let e = if a == 0 || a == 7 { 0.5 } else { 0.0 };
            assert!((v - e).abs() < 1e-12);
        }
    }

    #[test]
    fn ghz3_xxx_probabilities_match_projectors() {
        // brute force: explicit |a><a| from Kronecker products of local eigenvectors
        let g = PureState::ghz(3).unwrap();
        let s = ps("XXX");
        let got = outcome_probabilities(&g, &s).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let plus = [Complex64::new(h, 0.0), Complex64::new(h, 0.0)];
        let minus = [Complex64::new(h, 0.0), Complex64::new(-h, 0.0)];
        for a in 0..8usize {
            let mut v = DMatrix::from_element(1, 1, Complex64::new(1.0, 0.0));
            for q in 0..3 {
                let local = if (a >> (2 - q)) & 1 == 0 { plus } else { minus };
                v = v.kronecker(&DMatrix::from_column_slice(2, 1, &local));
            }
            let amp: Complex64 = (0..8).map(|i| v[(i, 0)].conj() * g.amplitudes()[i]).sum();
            assert!((amp.norm_sqr() - got[a]).abs() < 1e-12);
            let even = a.count_ones() % 2 == 0;
            assert!((got[a] - if even { 0.25 } else { 0.0 }).abs() < 1e-12, "outcome {a}");
        }
    }

    #[test]
    fn ket_zero_in_x_basis_is_uniform() {
        let zero = PureState::basis(1, 0).unwrap();
        let p = outcome_probabilities(&zero, &ps("X")).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-15 && (p[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn maximally_mixed_has_zero_expectations() {
        let m = DensityMatrix::maximally_mixed(3).unwrap();
        for s in ["XII", "ZZZ", "YXZ", "IIZ"] {
            assert!(expectation(&m, &ps(s)).unwrap().abs() < 1e-15);
        }
        assert!((expectation(&m, &ps("III")).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mixed_and_pure_routes_agree() {
        let p = PureState::random(3, 21).unwrap();
        let rho = p.to_density();
        for s in ["XYZ", "ZIY", "YYY", "IXI"] {
            let s = ps(s);
            assert!((expectation(&p, &s).unwrap() - expectation(&rho, &s).unwrap()).abs() < 1e-12);
            let a = outcome_probabilities(&p, &s).unwrap();
            let b = outcome_probabilities(&rho, &s).unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dense_trace_matches_sparse_expectation() {
        let rho = DensityMatrix::random_mixture(2, 3, 5).unwrap();
        let s = ps("XY");
        let Operator(op) = s.operator();
        let dense = (rho.matrix() * op).trace();
        assert!((dense.re - expectation(&rho, &s).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let g = PureState::ghz(3).unwrap();
        assert!(matches!(expectation(&g, &ps("XX")), Err(QstError::Dimension(_))));
        assert!(matches!(outcome_probabilities(&g, &ps("XXXX")), Err(QstError::Dimension(_))));
    }

    #[test]
    fn purity_examples() {
        let p = PureState::random(2, 1).unwrap().to_density();
        assert!((purity(&p).unwrap() - 1.0).abs() < 1e-12);
        let m = DensityMatrix::maximally_mixed(3).unwrap();
        assert!((purity(&m).unwrap() - 0.125).abs() < 1e-12);
        let bad = DensityMatrix::diagonal(&[1.5, -0.5]).unwrap();
        assert!(matches!(purity(&bad), Err(QstError::Validation(_))));
    }
}
