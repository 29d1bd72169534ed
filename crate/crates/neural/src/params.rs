//! Parameter storage, seeded initialization and the Adam optimizer.

use rand::distributions::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::error::{NeuralError, Result};
use crate::graph::ParamId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Flat list of named parameter tensors. Order is fixed at construction, so
/// ids are stable for the lifetime of a network.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    tensors: Vec<ParamTensor>,
}

/// Glorot-uniform limit `sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_limit(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> ParamId {
        assert_eq!(shape.iter().product::<usize>(), data.len());
        self.tensors.push(ParamTensor {
            name: name.into(),
            shape,
            data,
        });
        ParamId(self.tensors.len() - 1)
    }

    pub fn glorot(&mut self, name: impl Into<String>, shape: Vec<usize>, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> ParamId {
        let limit = glorot_limit(fan_in, fan_out);
        let n = shape.iter().product();
        // bulk draws from a fast generator keyed by one draw of the stream
        let bulk = Xoshiro256PlusPlus::seed_from_u64(rng.gen());
        let data = Uniform::new_inclusive(-limit, limit).sample_iter(bulk).take(n).collect();
        self.push(name, shape, data)
    }

    pub fn zeros(&mut self, name: impl Into<String>, shape: Vec<usize>) -> ParamId {
        let n = shape.iter().product();
        self.push(name, shape, vec![0.0; n])
    }

    pub fn filled(&mut self, name: impl Into<String>, shape: Vec<usize>, value: f64) -> ParamId {
        let n = shape.iter().product();
        self.push(name, shape, vec![value; n])
    }

    pub fn get(&self, id: ParamId) -> &ParamTensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ParamTensor {
        &mut self.tensors[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &ParamTensor> {
        self.tensors.iter()
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }
}

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.epsilon > 0.0
            && self.beta1 > 0.0
            && self.beta1 < 1.0
            && self.beta2 > 0.0
            && self.beta2 < 1.0;
        if ok {
            Ok(())
        } else {
            Err(NeuralError::Config(format!("invalid Adam hyperparameters {self:?}")))
        }
    }
}

/// First and second moment estimates for every tensor of one store.
#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|t| vec![0.0; t.data.len()]).collect();
        Self {
            config,
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update. Parameters without a gradient are left alone but
    /// still see their moments decay. The store is untouched when any
    /// gradient is non-finite.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[(ParamId, Vec<f64>)]) -> Result<()> {
        for (id, g) in grads {
            if g.iter().any(|x| !x.is_finite()) {
                return Err(NeuralError::Divergence(store.get(*id).name.clone()));
            }
        }
        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (id, g) in grads {
            let (m, v) = (&mut self.m[id.0], &mut self.v[id.0]);
            let p = &mut store.get_mut(*id).data;
            let (step, inv_c2) = (learning_rate / c1, 1.0 / c2);
            for (((pi, mi), vi), &gi) in p.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g) {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                *pi -= step * *mi / ((*vi * inv_c2).sqrt() + epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(x: f64) -> (ParamStore, ParamId) {
        let mut s = ParamStore::new();
        let id = s.push("x", vec![1], vec![x]);
        (s, id)
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let (mut s, id) = scalar_store(0.7);
        let mut adam = Adam::new(AdamConfig::default(), &s);
        for _ in 0..10 {
            adam.step(&mut s, &[(id, vec![0.0])]).unwrap();
        }
        assert_eq!(s.get(id).data, vec![0.7]);
    }

    #[test]
    fn constant_gradient_moves_by_learning_rate() {
        let (mut s, id) = scalar_store(0.0);
        let mut adam = Adam::new(AdamConfig::default(), &s);
        let mut prev = 0.0;
        for k in 0..500 {
            adam.step(&mut s, &[(id, vec![-3.5])]).unwrap();
            let x = s.get(id).data[0];
            if k > 100 {
                assert!(((x - prev) - 1e-3).abs() < 1e-6);
            }
            prev = x;
        }
    }

    #[test]
    fn non_finite_gradient_names_tensor() {
        let (mut s, id) = scalar_store(1.0);
        let mut adam = Adam::new(AdamConfig::default(), &s);
        let err = adam.step(&mut s, &[(id, vec![f64::NAN])]).unwrap_err();
        assert!(matches!(err, NeuralError::Divergence(ref n) if n == "x"));
        assert_eq!(s.get(id).data, vec![1.0]);
    }
}
