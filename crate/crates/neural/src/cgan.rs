//! Conditional GAN training. The generator is conditioned on the measured
//! statistics only (no noise input); the discriminator scores the pair
//! `[condition, candidate statistics]`.
//!
//! Losses are written with `softplus`, which equals the usual
//! cross-entropy terms on the sigmoid output but is stable for large logits:
//! `L_D = softplus(-l_real) + softplus(l_fake)`,
//! `L_G = softplus(-l_fake) + lambda * MSE(stats, target)`.

use qst_core::{MeasurementDataset, StateRef};
use serde::{Deserialize, Serialize};

use crate::error::{NeuralError, Result};
use crate::graph::{Graph, Tensor};
use crate::network::{Network, Role};
use crate::params::Adam;
use crate::train::{
    check_dataset, reinitialize, Aborted, Logger, Stopper, TrainConfig, TrainTrace, MAX_REINITS,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CganConfig {
    pub lambda_mse: f64,
    /// Discriminator loss below this for `saturation_window` consecutive
    /// steps is reported as saturation.
    pub saturation_loss: f64,
    pub saturation_window: usize,
}

impl Default for CganConfig {
    fn default() -> Self {
        Self {
            lambda_mse: 10.0,
            saturation_loss: 1e-6,
            saturation_window: 100,
        }
    }
}

/// Discriminator outputs of one step, for diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscriminatorProbe {
    pub d_real: f64,
    pub d_fake: f64,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Discriminator probabilities on the true and the generated statistics.
pub fn probe(generator: &Network, discriminator: &Network, dataset: &MeasurementDataset) -> Result<DiscriminatorProbe> {
    let target = check_dataset(generator, dataset)?;
    let fake = generator
        .infer(&target, &mut crate::network::FloatBackend)?
        .stats
        .expect("generator has statistics");
    let logit = |cand: &[f64]| -> Result<f64> {
        let mut input = target.clone();
        input.extend_from_slice(cand);
        Ok(discriminator.infer(&input, &mut crate::network::FloatBackend)?.raw[0])
    };
    Ok(DiscriminatorProbe {
        d_real: sigmoid(logit(&target)?),
        d_fake: sigmoid(logit(&fake)?),
    })
}

/// Alternating generator/discriminator updates. The trace's `loss` column is
/// the generator's MSE term, which also drives early stopping.
pub fn train_cgan<'a>(
    generator: &mut Network,
    discriminator: &mut Network,
    dataset: &MeasurementDataset,
    truth: Option<StateRef<'a>>,
    config: &TrainConfig,
    cgan: &CganConfig,
) -> std::result::Result<TrainTrace, Aborted> {
    let mut trace = TrainTrace {
        records: Vec::new(),
        final_rho: None,
        final_loss: f64::NAN,
        final_fidelity: None,
        iterations: 0,
        stop_reason: None,
        converged: false,
        warnings: Vec::new(),
    };
    let abort = |error: NeuralError, trace: TrainTrace| Aborted { error, trace };
    if let Err(e) = config.validate() {
        return Err(abort(e, trace));
    }
    if !(cgan.lambda_mse >= 0.0) || cgan.saturation_window == 0 {
        return Err(abort(NeuralError::Config(format!("invalid CGAN config {cgan:?}")), trace));
    }
    let target = match check_dataset(generator, dataset) {
        Ok(t) => t,
        Err(e) => return Err(abort(e, trace)),
    };
    if discriminator.spec.role != Role::Discriminator || discriminator.spec.input_dim != 2 * target.len() {
        return Err(abort(
            NeuralError::Config("discriminator does not match the generator's statistics".into()),
            trace,
        ));
    }

    let logger = Logger::new(truth, config);
    let mut adam_g = Adam::new(config.adam(), &generator.params);
    let mut adam_d = Adam::new(config.adam(), &discriminator.params);
    let mut stopper = Stopper::new(config.early_stop);
    let mut attempts = 0u64;
    let mut saturated_for = 0usize;
    let mut saturation_reported = false;
    let mut it = 0usize;

    loop {
        // generator step; the discriminator is frozen
        let (g_grads, fake) = {
            let mut g = Graph::new();
            let cond = g.constant(Tensor::row(target.clone()));
            let fwd = match generator.forward(&mut g, cond, true) {
                Ok(f) => f,
                Err(NeuralError::Degenerate(t)) => {
                    drop(g);
                    attempts += 1;
                    trace
                        .warnings
                        .push(format!("degenerate trace {t:e} at iteration {it}; reinitialized (attempt {attempts})"));
                    if attempts > MAX_REINITS {
                        return Err(abort(NeuralError::Degenerate(t), trace));
                    }
                    if let Err(e) = reinitialize(generator, attempts) {
                        return Err(abort(e, trace));
                    }
                    adam_g = Adam::new(config.adam(), &generator.params);
                    stopper = Stopper::new(config.early_stop);
                    continue;
                }
                Err(e) => return Err(abort(e, trace)),
            };
            let stats = fwd.stats.expect("generator has statistics");
            let step = (|| -> Result<_> {
                let mse = g.mse(stats, &target)?;
                let pair = g.concat(&[cond, stats]);
                let logit = discriminator.forward(&mut g, pair, false)?.raw;
                let neg = g.scale(logit, -1.0);
                let adv = g.softplus(neg);
                let adv = g.mean(adv);
                let rec = g.scale(mse, cgan.lambda_mse);
                let loss = g.add(adv, rec)?;
                Ok((mse, loss))
            })();
            let (mse_var, loss_var) = match step {
                Ok(v) => v,
                Err(e) => return Err(abort(e, trace)),
            };
            let mse = g.value(mse_var)[0];
            let g_loss = g.value(loss_var)[0];
            if !mse.is_finite() || !g_loss.is_finite() {
                return Err(abort(NeuralError::NonFiniteLoss(it), trace));
            }
            let rho = g.value(fwd.rho.expect("generator has rho")).to_vec();
            let stop = stopper.observe(mse);
            match logger.log(&mut trace, it, mse, &rho, stop) {
                Ok(true) => return Ok(trace),
                Ok(false) => {}
                Err(e) => return Err(abort(e, trace)),
            }
            (g.backward(loss_var).params(), g.value(stats).to_vec())
        };

        // discriminator step on real and (detached) generated statistics
        let (d_grads, d_loss) = {
            let mut g = Graph::new();
            let step = (|| -> Result<_> {
                let mut real = target.clone();
                real.extend_from_slice(&target);
                let mut cand = target.clone();
                cand.extend_from_slice(&fake);
                let real = g.constant(Tensor::row(real));
                let cand = g.constant(Tensor::row(cand));
                let l_real = discriminator.forward(&mut g, real, true)?.raw;
                let l_fake = discriminator.forward(&mut g, cand, true)?.raw;
                let neg = g.scale(l_real, -1.0);
                let a = g.softplus(neg);
                let b = g.softplus(l_fake);
                let loss = g.add(a, b)?;
                Ok(g.mean(loss))
            })();
            let loss_var = match step {
                Ok(v) => v,
                Err(e) => return Err(abort(e, trace)),
            };
            let d_loss = g.value(loss_var)[0];
            if !d_loss.is_finite() {
                return Err(abort(NeuralError::NonFiniteLoss(it), trace));
            }
            (g.backward(loss_var).params(), d_loss)
        };

        if d_loss < cgan.saturation_loss {
            saturated_for += 1;
            if saturated_for >= cgan.saturation_window && !saturation_reported {
                trace.warnings.push(format!(
                    "discriminator saturated: loss below {:e} for {} consecutive steps (iteration {it})",
                    cgan.saturation_loss, cgan.saturation_window
                ));
                saturation_reported = true;
            }
        } else {
            saturated_for = 0;
        }

        if let Err(e) = adam_g.step(&mut generator.params, &g_grads) {
            trace.iterations = it;
            return Err(abort(e, trace));
        }
        if let Err(e) = adam_d.step(&mut discriminator.params, &d_grads) {
            trace.iterations = it;
            return Err(abort(e, trace));
        }
        it += 1;
    }
}
