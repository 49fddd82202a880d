use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Parameterized;
use crate::error::{GapError, Result};
use crate::rng::rng_from;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> AdamConfig {
        AdamConfig {
            learning_rate: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(num_params: usize) -> AdamState {
        AdamState {
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update in place.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(GapError::DimensionMismatch(format!(
            "adam: {} params, {} grads, state of {}",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.t += 1;
    let c1 = 1.0 - cfg.beta1.powi(state.t as i32);
    let c2 = 1.0 - cfg.beta2.powi(state.t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpOptimizerConfig {
    pub learning_rate: f64,
    pub clip_norm: f64,
    /// Noise standard deviation over the clip norm.
    pub noise_multiplier: f64,
    /// Expected batch size; the noisy sum is divided by it.
    pub batch_size: usize,
    pub adam_betas: (f64, f64),
    pub adam_eps: f64,
}

impl DpOptimizerConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.adam_betas.0,
            beta2: self.adam_betas.1,
            eps: self.adam_eps,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.clip_norm > 0.0) {
            return Err(GapError::InvalidParameter(format!(
                "clip norm must be positive, got {}",
                self.clip_norm
            )));
        }
        if !(self.noise_multiplier >= 0.0) || !self.noise_multiplier.is_finite() {
            return Err(GapError::InvalidParameter(format!(
                "noise multiplier must be finite and non-negative, got {}",
                self.noise_multiplier
            )));
        }
        if self.noise_multiplier > 0.0 && self.clip_norm.is_infinite() {
            return Err(GapError::InvalidParameter(
                "noise needs a finite clip norm".into(),
            ));
        }
        if self.batch_size == 0 {
            return Err(GapError::InvalidParameter("batch size must be positive".into()));
        }
        Ok(())
    }
}

/// What one DP-Adam step did; the accountant needs only the noise
/// multiplier and the sampling rate chosen by the caller.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DpStepInfo {
    pub noise_multiplier: f64,
    pub samples: usize,
    pub clipped: usize,
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Scales `g` by `min(1, c / ‖g‖)` and returns the original norm.
pub fn clip_to_norm(g: &mut [f64], c: f64) -> f64 {
    let norm = l2_norm(g);
    if norm > c {
        let scale = c / norm;
        g.iter_mut().for_each(|x| *x *= scale);
    }
    norm
}

/// Clips every per-sample gradient, sums them, adds `N(0, (C·z)²)` per
/// coordinate and divides by the expected batch size. An empty batch yields
/// pure noise.
pub fn privatize_gradients(
    per_sample: &[Vec<f64>],
    num_params: usize,
    cfg: &DpOptimizerConfig,
    noise_seed: u64,
) -> Result<(Vec<f64>, usize)> {
    cfg.validate()?;
    let mut sum = vec![0.0; num_params];
    let mut clipped = 0;
    for g in per_sample {
        if g.len() != num_params {
            return Err(GapError::DimensionMismatch(format!(
                "per-sample gradient of {} entries, model has {num_params}",
                g.len()
            )));
        }
        let mut g = g.clone();
        if clip_to_norm(&mut g, cfg.clip_norm) > cfg.clip_norm {
            clipped += 1;
        }
        sum.iter_mut().zip(&g).for_each(|(s, x)| *s += x);
    }
    let std = cfg.clip_norm * cfg.noise_multiplier;
    if std > 0.0 {
        let mut rng = rng_from(noise_seed);
        for s in sum.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *s += std * z;
        }
    }
    let b = cfg.batch_size as f64;
    sum.iter_mut().for_each(|s| *s /= b);
    Ok((sum, clipped))
}

/// Privatizes the per-sample gradients and applies Adam to `model`.
pub fn dp_adam_step<M: Parameterized + ?Sized>(
    model: &mut M,
    per_sample: &[Vec<f64>],
    state: &mut AdamState,
    cfg: &DpOptimizerConfig,
    noise_seed: u64,
) -> Result<DpStepInfo> {
    if model.uses_batch_norm() {
        return Err(GapError::BatchNormUnderNodePrivacy);
    }
    if per_sample.is_empty() {
        return Err(GapError::EmptyBatch);
    }
    let (grad, clipped) = privatize_gradients(per_sample, model.num_params(), cfg, noise_seed)?;
    let mut params = model.params();
    adam_step(&mut params, &grad, state, &cfg.adam())?;
    model.set_params(&params)?;
    Ok(DpStepInfo {
        noise_multiplier: cfg.noise_multiplier,
        samples: per_sample.len(),
        clipped,
    })
}

/// Evaluates `grad_of(i)` for every sample in parallel; the result is in
/// sample order regardless of scheduling.
pub fn per_sample_gradients<F>(num_samples: usize, grad_of: F) -> Result<Vec<Vec<f64>>>
where
    F: Fn(usize) -> Result<Vec<f64>> + Sync + Send,
{
    (0..num_samples).into_par_iter().map(grad_of).collect()
}
