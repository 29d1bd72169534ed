//! The two physics layers at the end of every network: the density-matrix
//! layer `rho = T T^dagger / Tr(T T^dagger)` and the statistics layer that
//! measures `rho` in the training bases.
//!
//! Complex `d x d` matrices travel through the graph as real tensors of shape
//! `[d, d, 2]` (channel 0 real, channel 1 imaginary). Gradients of a real loss
//! `L` with respect to a complex entry `z = x + iy` are packed the same way,
//! i.e. as `dL/dx + i dL/dy`.

use nalgebra::DMatrix;
use num_complex::Complex64;
use qst_core::{BasisSet, DensityMatrix, Method, PauliString};

use crate::error::{shape_err, NeuralError, Result};

/// Smallest admissible `Tr(T T^dagger)`.
pub const DEGENERATE_TRACE: f64 = 1e-30;

pub(crate) fn unpack(raw: &[f64], d: usize) -> DMatrix<Complex64> {
    DMatrix::from_fn(d, d, |i, j| {
        let k = (i * d + j) * 2;
        Complex64::new(raw[k], raw[k + 1])
    })
}

pub(crate) fn pack(m: &DMatrix<Complex64>, out: &mut [f64]) {
    let d = m.nrows();
    for i in 0..d {
        for j in 0..d {
            let k = (i * d + j) * 2;
            out[k] = m[(i, j)].re;
            out[k + 1] = m[(i, j)].im;
        }
    }
}

/// Side length `d` of a packed `[d, d, 2]` buffer, if it is one.
pub(crate) fn packed_dim(len: usize) -> Option<usize> {
    let d = ((len / 2) as f64).sqrt().round() as usize;
    (d >= 2 && d.is_power_of_two() && 2 * d * d == len).then_some(d)
}

/// Forward pass; returns the packed `rho` and `Tr(T T^dagger)`.
pub(crate) fn density_forward(raw: &[f64], d: usize) -> Result<(Vec<f64>, f64)> {
    let t = unpack(raw, d);
    let trace: f64 = raw.iter().map(|x| x * x).sum();
    if !(trace >= DEGENERATE_TRACE) {
        return Err(NeuralError::Degenerate(trace));
    }
    let rho = (&t * t.adjoint()).unscale(trace);
    let mut out = vec![0.0; raw.len()];
    pack(&rho, &mut out);
    Ok((out, trace))
}

/// g_T = (G + G^dagger) T / t - 2 Re<G, rho> T / t
pub(crate) fn density_backward(raw: &[f64], rho: &[f64], trace: f64, grad_rho: &[f64], grad_raw: &mut [f64]) {
    let d = packed_dim(raw.len()).expect("validated in forward");
    let t = unpack(raw, d);
    let g = unpack(grad_rho, d);
    let overlap: f64 = grad_rho.iter().zip(rho).map(|(a, b)| a * b).sum();
    let sym = &g + g.adjoint();
    let gt = (sym * &t).unscale(trace) - t.scale(2.0 * overlap / trace);
    for i in 0..d {
        for j in 0..d {
            let k = (i * d + j) * 2;
            grad_raw[k] += gt[(i, j)].re;
            grad_raw[k + 1] += gt[(i, j)].im;
        }
    }
}

/// Packed `[d, d, 2]` buffer as a [`DensityMatrix`].
pub fn density_from_packed(rho: &[f64]) -> Result<DensityMatrix> {
    let d = packed_dim(rho.len()).ok_or_else(|| shape_err("density_from_packed", &[rho.len()], &[]))?;
    Ok(DensityMatrix::from_matrix(unpack(rho, d))?)
}

#[derive(Debug, Clone)]
enum BasisRow {
    /// Pauli string as a signed permutation: `P|j> = phase_j |j ^ flip>`.
    Expectation { flip: usize, phases: Vec<Complex64> },
    /// Local basis change `U`, row-major `d x d`; outcome `a` is row `a`.
    Distribution { u: DMatrix<Complex64> },
}

/// Precomputed measurement operators for one basis set and method.
#[derive(Debug, Clone)]
pub struct StatisticsPlan {
    n_qubits: usize,
    method: Method,
    rows: Vec<BasisRow>,
}

fn basis_change_matrix(s: &PauliString) -> DMatrix<Complex64> {
    let n = s.n_qubits();
    let d = 1usize << n;
    let locals: Vec<[[Complex64; 2]; 2]> = s.letters().iter().map(|p| p.basis_change()).collect();
    DMatrix::from_fn(d, d, |a, i| {
        let mut v = Complex64::new(1.0, 0.0);
        for (q, u) in locals.iter().enumerate() {
            let bit = n - 1 - q;
            v *= u[(a >> bit) & 1][(i >> bit) & 1];
        }
        v
    })
}

impl StatisticsPlan {
    pub fn new(bases: &BasisSet, method: Method) -> Self {
        let rows = bases
            .strings()
            .iter()
            .map(|s| match method {
                Method::M1 => BasisRow::Expectation {
                    flip: s.flip_mask(),
                    phases: s.phases(),
                },
                Method::M2 => BasisRow::Distribution {
                    u: basis_change_matrix(s),
                },
            })
            .collect();
        Self {
            n_qubits: bases.n_qubits(),
            method,
            rows,
        }
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn dim(&self) -> usize {
        1 << self.n_qubits
    }

    pub fn n_bases(&self) -> usize {
        self.rows.len()
    }

    /// |M| for M1, |M| 2^N for M2.
    pub fn output_len(&self) -> usize {
        match self.method {
            Method::M1 => self.rows.len(),
            Method::M2 => self.rows.len() * self.dim(),
        }
    }

    pub(crate) fn check_input(&self, len: usize) -> Result<()> {
        let d = self.dim();
        if len != 2 * d * d {
            return Err(shape_err("statistics", &[len], &[d, d, 2]));
        }
        Ok(())
    }

    /// M1: `Tr(rho P_s)`; M2: `<a|U rho U^dagger|a>`, basis-major.
    pub fn forward(&self, rho: &[f64]) -> Vec<f64> {
        let d = self.dim();
        let mut out = Vec::with_capacity(self.output_len());
        let m = match self.method {
            Method::M2 => Some(unpack(rho, d)),
            Method::M1 => None,
        };
        for row in &self.rows {
            match row {
                BasisRow::Expectation { flip, phases } => {
                    let mut acc = 0.0;
                    for (j, ph) in phases.iter().enumerate() {
                        let k = (j * d + (j ^ flip)) * 2;
                        acc += rho[k] * ph.re - rho[k + 1] * ph.im;
                    }
                    out.push(acc);
                }
                BasisRow::Distribution { u } => {
                    let w = u * m.as_ref().expect("unpacked for M2");
                    for a in 0..d {
                        let p: Complex64 = (0..d).map(|j| w[(a, j)] * u[(a, j)].conj()).sum();
                        out.push(p.re);
                    }
                }
            }
        }
        out
    }

    /// Accumulates `dL/drho` (packed) from `dL/dstatistics`.
    pub fn backward(&self, grad_out: &[f64], grad_rho: &mut [f64]) {
        let d = self.dim();
        let mut offset = 0;
        for row in &self.rows {
            match row {
                BasisRow::Expectation { flip, phases } => {
                    let g = grad_out[offset];
                    offset += 1;
                    for (j, ph) in phases.iter().enumerate() {
                        let k = (j * d + (j ^ flip)) * 2;
                        grad_rho[k] += g * ph.re;
                        grad_rho[k + 1] -= g * ph.im;
                    }
                }
                BasisRow::Distribution { u } => {
                    let g = &grad_out[offset..offset + d];
                    offset += d;
                    // U^dagger diag(g) U
                    let mut scaled = u.clone();
                    for (a, &ga) in g.iter().enumerate() {
                        scaled.row_mut(a).scale_mut(ga);
                    }
                    let gm = u.adjoint() * scaled;
                    for i in 0..d {
                        for j in 0..d {
                            let k = (i * d + j) * 2;
                            grad_rho[k] += gm[(i, j)].re;
                            grad_rho[k + 1] += gm[(i, j)].im;
                        }
                    }
                }
            }
        }
    }
}
