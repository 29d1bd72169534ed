use serde::{Deserialize, Serialize};

use crate::error::{CrossbarError, Result};

/// Device and array parameters. Conductances in siemens, voltage in volts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CrossbarConfig {
    pub rows: usize,
    pub cols: usize,
    pub g_min: f64,
    pub g_max: f64,
    /// Number of programmable conductance states; 2 is binary LRS/HRS.
    pub levels: u64,
    /// Relative standard deviation of the per-read multiplicative noise.
    pub read_noise_sigma: f64,
    pub v_read: f64,
    pub seed: u64,
}

impl Default for CrossbarConfig {
    fn default() -> Self {
        Self {
            rows: 128,
            cols: 128,
            g_min: 1e-6,
            g_max: 1e-4,
            levels: 1 << 16,
            read_noise_sigma: 0.0,
            v_read: 0.2,
            seed: 0,
        }
    }
}

impl CrossbarConfig {
    pub fn validate(&self) -> Result<()> {
        let problem = if self.rows == 0 || self.cols == 0 {
            Some("array dimensions must be positive")
        } else if !(self.g_min > 0.0 && self.g_min < self.g_max && self.g_max.is_finite()) {
            Some("need 0 < g_min < g_max")
        } else if self.levels < 2 {
            Some("levels must be at least 2")
        } else if !(self.read_noise_sigma >= 0.0 && self.read_noise_sigma.is_finite()) {
            Some("read_noise_sigma must be a non-negative number")
        } else if !(self.v_read > 0.0 && self.v_read.is_finite()) {
            Some("v_read must be positive")
        } else {
            None
        };
        match problem {
            Some(p) => Err(CrossbarError::Config(format!("{p} ({self:?})"))),
            None => Ok(()),
        }
    }

    /// Spacing between adjacent conductance levels.
    pub fn level_step(&self) -> f64 {
        (self.g_max - self.g_min) / (self.levels - 1) as f64
    }

    /// Nearest programmable level to `g`, clamped to the device range.
    pub fn quantize(&self, g: f64) -> f64 {
        let step = self.level_step();
        let k = ((g - self.g_min) / step).round().clamp(0.0, (self.levels - 1) as f64);
        (self.g_min + k * step).min(self.g_max)
    }
}
