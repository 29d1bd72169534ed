use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::config::CrossbarConfig;
use crate::error::{CrossbarError, Result};

/// One physical array holding the block starting at (`row_offset`,
/// `col_offset`) of the logical matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tile {
    pub row_offset: usize,
    pub col_offset: usize,
    pub rows: usize,
    pub cols: usize,
}

/// A weight matrix in differential conductance form, `w = (g+ - g-) / scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProgrammedCrossbar {
    pub config: CrossbarConfig,
    /// Logical rows (inputs) and columns (outputs).
    pub n_rows: usize,
    pub n_cols: usize,
    pub g_plus: Vec<f64>,
    pub g_minus: Vec<f64>,
    pub weight_scale: f64,
    pub tile_map: Vec<Tile>,
}

impl ProgrammedCrossbar {
    /// Weights recovered from the programmed conductances.
    pub fn dequantized(&self) -> Vec<f64> {
        self.g_plus
            .iter()
            .zip(&self.g_minus)
            .map(|(p, m)| (p - m) / self.weight_scale)
            .collect()
    }

    /// Worst-case rounding error of one weight, in weight units.
    pub fn half_step(&self) -> f64 {
        self.config.level_step() / (2.0 * self.weight_scale)
    }
}

/// Programs a row-major `[n_rows, n_cols]` matrix. Positive weights raise
/// `g+` above `g_min`, negative ones raise `g-`; the largest magnitude maps to
/// `g_max`. An all-zero matrix leaves every cell at `g_min` with unit scale.
pub fn program_weights(w: &[f64], n_rows: usize, n_cols: usize, config: &CrossbarConfig) -> Result<ProgrammedCrossbar> {
    config.validate()?;
    if w.len() != n_rows * n_cols || n_rows == 0 || n_cols == 0 {
        return Err(CrossbarError::Shape {
            op: "program_weights",
            expected: n_rows * n_cols,
            got: w.len(),
        });
    }
    if let Some(k) = w.iter().position(|x| !x.is_finite()) {
        return Err(CrossbarError::NonFinite {
            row: k / n_cols,
            col: k % n_cols,
        });
    }
    let max_abs = w.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let weight_scale = if max_abs > 0.0 {
        (config.g_max - config.g_min) / max_abs
    } else {
        1.0
    };
    let mut g_plus = vec![config.g_min; w.len()];
    let mut g_minus = vec![config.g_min; w.len()];
    for (k, &x) in w.iter().enumerate() {
        let g = config.quantize(config.g_min + x.abs() * weight_scale);
        if x > 0.0 {
            g_plus[k] = g;
        } else if x < 0.0 {
            g_minus[k] = g;
        }
    }
    let mut tile_map = Vec::new();
    for row_offset in (0..n_rows).step_by(config.rows) {
        for col_offset in (0..n_cols).step_by(config.cols) {
            tile_map.push(Tile {
                row_offset,
                col_offset,
                rows: config.rows.min(n_rows - row_offset),
                cols: config.cols.min(n_cols - col_offset),
            });
        }
    }
    Ok(ProgrammedCrossbar {
        config: *config,
        n_rows,
        n_cols,
        g_plus,
        g_minus,
        weight_scale,
        tile_map,
    })
}

/// `y_j = sum_i w_ij x_i` computed as column currents. Each read perturbs
/// every cell by `g (1 + eta)`, `eta ~ N(0, sigma)`, drawn from `rng` in a
/// fixed order (two draws per cell, tile by tile) whether or not the input
/// is zero, so runs at different `sigma` share their random numbers.
pub fn analog_mvm(xbar: &ProgrammedCrossbar, x: &[f64], rng: &mut impl Rng) -> Result<Vec<f64>> {
    if x.len() != xbar.n_rows {
        return Err(CrossbarError::Shape {
            op: "analog_mvm",
            expected: xbar.n_rows,
            got: x.len(),
        });
    }
    let sigma = xbar.config.read_noise_sigma;
    let v = xbar.config.v_read;
    let n_cols = xbar.n_cols;
    let mut y = vec![0.0; n_cols];
    let mut partial = Vec::new();
    for tile in &xbar.tile_map {
        partial.clear();
        partial.resize(tile.cols, 0.0);
        for i in tile.row_offset..tile.row_offset + tile.rows {
            let vi = v * x[i];
            let base = i * n_cols + tile.col_offset;
            let gp = &xbar.g_plus[base..base + tile.cols];
            let gm = &xbar.g_minus[base..base + tile.cols];
            if sigma > 0.0 {
                for ((p, &a), &b) in partial.iter_mut().zip(gp).zip(gm) {
                    let za: f64 = rng.sample(StandardNormal);
                    let zb: f64 = rng.sample(StandardNormal);
                    *p += (a * (1.0 + sigma * za) - b * (1.0 + sigma * zb)) * vi;
                }
            } else {
                for ((p, &a), &b) in partial.iter_mut().zip(gp).zip(gm) {
                    *p += (a - b) * vi;
                }
            }
        }
        for (o, p) in y[tile.col_offset..tile.col_offset + tile.cols].iter_mut().zip(&partial) {
            *o += p;
        }
    }
    let unit = xbar.weight_scale * v;
    y.iter_mut().for_each(|o| *o /= unit);
    Ok(y)
}
