//! Physicality checks and Uhlmann fidelity.

use std::fmt;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use serde::Serialize;

use crate::error::{QstError, Result};
use crate::state::{DensityMatrix, StateRef};

/// Tolerances of the density-matrix invariants.
pub const HERMITIAN_TOLERANCE: f64 = 1e-10;
pub const TRACE_TOLERANCE: f64 = 1e-10;
pub const PSD_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ValidationReport {
    pub pass: bool,
    /// max_ij |rho_ij - conj(rho_ji)|
    pub hermiticity_residual: f64,
    /// |Tr(rho) - 1|, including any imaginary part of the trace
    pub trace_residual: f64,
    pub min_eigenvalue: f64,
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} (hermiticity residual {:e}, trace residual {:e}, min eigenvalue {:e})",
            if self.pass { "pass" } else { "fail" },
            self.hermiticity_residual,
            self.trace_residual,
            self.min_eigenvalue
        )
    }
}

fn hermitian_part(m: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    (m + m.adjoint()) * Complex64::new(0.5, 0.0)
}

/// Checks Hermiticity, unit trace and positive semi-definiteness.
pub fn validate_density(rho: &DensityMatrix) -> ValidationReport {
    let m = rho.matrix();
    let d = m.nrows();
    let mut herm = 0.0f64;
    for i in 0..d {
        for j in i..d {
            herm = herm.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    let trace_residual = (m.trace() - Complex64::new(1.0, 0.0)).norm();
    let min_eigenvalue = SymmetricEigen::new(hermitian_part(m))
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    let pass = herm <= HERMITIAN_TOLERANCE
        && trace_residual <= TRACE_TOLERANCE
        && min_eigenvalue >= -PSD_TOLERANCE;
    ValidationReport {
        pass,
        hermiticity_residual: herm,
        trace_residual,
        min_eigenvalue,
    }
}

fn ensure_physical(rho: &DensityMatrix) -> Result<()> {
    let report = validate_density(rho);
    if report.pass {
        Ok(())
    } else {
        Err(QstError::Validation(report.to_string()))
    }
}

/// Eigenvalues whose magnitude is below the round-off floor of the
/// decomposition are indistinguishable from zero; their square roots would
/// otherwise inject O(sqrt(eps)) error.
fn resolution_floor(eigenvalues: &DVector<f64>) -> f64 {
    let scale = eigenvalues.iter().fold(0.0f64, |m, l| m.max(l.abs()));
    eigenvalues.len() as f64 * f64::EPSILON * scale
}

fn clamped_root(l: f64, floor: f64) -> f64 {
    if l <= floor {
        0.0
    } else {
        l.sqrt()
    }
}

/// V diag(sqrt(lambda)) V^dagger; eigenvalues in [-tol, 0) are clamped to 0.
fn psd_sqrt(m: &DMatrix<Complex64>) -> Result<DMatrix<Complex64>> {
    let eig = SymmetricEigen::new(hermitian_part(m));
    if let Some(&bad) = eig.eigenvalues.iter().find(|&&l| l < -PSD_TOLERANCE) {
        return Err(QstError::Validation(format!("negative eigenvalue {bad:e} in square root")));
    }
    let floor = resolution_floor(&eig.eigenvalues);
    let roots = DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues.iter().map(|&l| Complex64::new(clamped_root(l, floor), 0.0)),
    );
    let v = &eig.eigenvectors;
    Ok(v * DMatrix::from_diagonal(&roots) * v.adjoint())
}

/// Uhlmann fidelity (Tr sqrt(sqrt(a) b sqrt(a)))^2 of two density matrices.
pub fn uhlmann_fidelity(a: &DensityMatrix, b: &DensityMatrix) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(QstError::Dimension(format!(
            "fidelity between {}-qubit and {}-qubit states",
            a.n_qubits(),
            b.n_qubits()
        )));
    }
    ensure_physical(a)?;
    ensure_physical(b)?;
    let root = psd_sqrt(a.matrix())?;
    let inner = hermitian_part(&(&root * b.matrix() * &root));
    let eigenvalues = SymmetricEigen::new(inner).eigenvalues;
    let floor = resolution_floor(&eigenvalues);
    let trace_root: f64 = eigenvalues.iter().map(|&l| clamped_root(l, floor)).sum();
    Ok((trace_root * trace_root).clamp(0.0, 1.0))
}

/// Fidelity between any two states: `|<a|b>|^2` when both are pure,
/// otherwise the Uhlmann formula on density matrices.
pub fn fidelity<'a, 'b>(a: impl Into<StateRef<'a>>, b: impl Into<StateRef<'b>>) -> Result<f64> {
    match (a.into(), b.into()) {
        (StateRef::Pure(x), StateRef::Pure(y)) => Ok(x.inner(y)?.norm_sqr().min(1.0)),
        (x, y) => {
            let to_rho = |s: StateRef<'_>| match s {
                StateRef::Pure(p) => p.to_density(),
                StateRef::Mixed(m) => m.clone(),
            };
            uhlmann_fidelity(&to_rho(x), &to_rho(y))
        }
    }
}
