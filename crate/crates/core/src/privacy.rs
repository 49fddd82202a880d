//! Rényi-DP accounting.
//!
//! Curves are kept symbolically as a list of mechanism terms so they can be
//! serialized into run manifests and evaluated at any order the terms
//! support. Conversion to (ε, δ)-DP minimizes over a grid of orders.

use serde::{Deserialize, Serialize};

use crate::error::{GapError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrivacyLevel {
    None,
    Edge,
    Node,
}

impl PrivacyLevel {
    pub fn parse(s: &str) -> Option<PrivacyLevel> {
        match s {
            "none" => Some(PrivacyLevel::None),
            "edge" => Some(PrivacyLevel::Edge),
            "node" => Some(PrivacyLevel::Node),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PrivacyLevel::None => "none",
            PrivacyLevel::Edge => "edge",
            PrivacyLevel::Node => "node",
        }
    }
}

impl std::fmt::Display for PrivacyLevel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Target (ε, δ) for a privacy level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyBudget {
    pub epsilon: f64,
    pub delta: f64,
    pub level: PrivacyLevel,
}

impl PrivacyBudget {
    /// The largest power of ten strictly below `1 / num_entities`.
    pub fn default_delta(num_entities: usize) -> f64 {
        let digits = num_entities.max(1).to_string().len() as i32;
        10f64.powi(-digits)
    }

    /// Checks ε > 0 and δ < 1 / `num_entities` (edges for edge level,
    /// nodes for node level).
    pub fn validate(&self, num_entities: usize) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(GapError::InvalidParameter(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(GapError::InvalidParameter(format!(
                "delta must lie in (0, 1), got {}",
                self.delta
            )));
        }
        if num_entities > 0 && self.delta >= 1.0 / num_entities as f64 {
            return Err(GapError::InvalidParameter(format!(
                "delta {} must be smaller than 1/{num_entities}",
                self.delta
            )));
        }
        Ok(())
    }
}

/// DP-SGD accounting parameters under Poisson subsampling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampledGaussianParams {
    /// Noise standard deviation divided by the clipping norm.
    pub noise_multiplier: f64,
    pub sampling_rate: f64,
    pub steps: u64,
}

impl SampledGaussianParams {
    /// `q = batch / n`, `T = epochs * ceil(n / batch)`.
    pub fn for_training(
        noise_multiplier: f64,
        batch_size: usize,
        train_size: usize,
        epochs: usize,
    ) -> SampledGaussianParams {
        let batch = batch_size.clamp(1, train_size.max(1));
        SampledGaussianParams {
            noise_multiplier,
            sampling_rate: batch as f64 / train_size.max(1) as f64,
            steps: (epochs * train_size.div_ceil(batch)) as u64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RdpTerm {
    /// ε(α) = coefficient · α, the shape of every (composed) Gaussian
    /// mechanism.
    Linear { coefficient: f64 },
    SampledGaussian(SampledGaussianParams),
}

impl RdpTerm {
    fn evaluate(&self, alpha: f64) -> Result<f64> {
        match *self {
            RdpTerm::Linear { coefficient } => Ok(coefficient * alpha),
            RdpTerm::SampledGaussian(p) => {
                Ok(p.steps as f64 * sampled_gaussian_step(p.sampling_rate, p.noise_multiplier, alpha)?)
            }
        }
    }
}

/// RDP cost as a function of the order α.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RdpCurve {
    terms: Vec<RdpTerm>,
}

impl RdpCurve {
    pub fn zero() -> RdpCurve {
        RdpCurve::default()
    }

    pub fn linear(coefficient: f64) -> RdpCurve {
        RdpCurve {
            terms: vec![RdpTerm::Linear { coefficient }],
        }
    }

    pub fn terms(&self) -> &[RdpTerm] {
        &self.terms
    }

    pub fn is_zero(&self) -> bool {
        self.terms
            .iter()
            .all(|t| matches!(t, RdpTerm::Linear { coefficient } if *coefficient == 0.0))
    }

    pub fn evaluate(&self, alpha: f64) -> Result<f64> {
        if !(alpha > 1.0) {
            return Err(GapError::InvalidParameter(format!(
                "RDP order must exceed 1, got {alpha}"
            )));
        }
        self.terms.iter().map(|t| t.evaluate(alpha)).sum()
    }

    /// Pointwise sum with `other`.
    pub fn then(&self, other: &RdpCurve) -> RdpCurve {
        let mut terms = self.terms.clone();
        terms.extend(other.terms.iter().cloned());
        RdpCurve { terms }
    }
}

/// Gaussian mechanism with L2 sensitivity `sensitivity` and noise std
/// `sigma`: ε(α) = Δ²α / (2σ²).
pub fn gaussian_rdp(sensitivity: f64, sigma: f64) -> Result<RdpCurve> {
    if !(sigma > 0.0) {
        return Err(GapError::InvalidParameter(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    if !(sensitivity >= 0.0) {
        return Err(GapError::InvalidParameter(format!(
            "sensitivity must be non-negative, got {sensitivity}"
        )));
    }
    Ok(RdpCurve::linear(sensitivity * sensitivity / (2.0 * sigma * sigma)))
}

/// Adaptive composition: pointwise sum of the curves.
pub fn compose(curves: &[RdpCurve]) -> Result<RdpCurve> {
    if curves.is_empty() {
        return Err(GapError::EmptyComposition);
    }
    Ok(RdpCurve {
        terms: curves.iter().flat_map(|c| c.terms.iter().cloned()).collect(),
    })
}

/// Poisson-subsampled Gaussian mechanism repeated `steps` times.
pub fn sampled_gaussian_rdp(params: SampledGaussianParams) -> Result<RdpCurve> {
    let q = params.sampling_rate;
    if !(q > 0.0 && q <= 1.0) {
        return Err(GapError::InvalidParameter(format!(
            "sampling rate must lie in (0, 1], got {q}"
        )));
    }
    if !(params.noise_multiplier > 0.0) {
        return Err(GapError::InvalidParameter(format!(
            "noise multiplier must be positive, got {}",
            params.noise_multiplier
        )));
    }
    Ok(RdpCurve {
        terms: vec![RdpTerm::SampledGaussian(params)],
    })
}

/// Single-step RDP of the subsampled Gaussian at integer order α:
/// `ln(Σ_k C(α,k) (1-q)^(α-k) q^k exp(k(k-1)/(2σ²))) / (α-1)`, summed in
/// log space.
fn sampled_gaussian_step(q: f64, sigma: f64, alpha: f64) -> Result<f64> {
    if alpha.fract() != 0.0 || alpha < 2.0 {
        return Err(GapError::NonIntegerOrder(alpha));
    }
    let a = alpha as u64;
    let ln_q = q.ln();
    let ln_1mq = (-q).ln_1p();
    let inv_2s2 = 1.0 / (2.0 * sigma * sigma);

    let mut log_terms = Vec::with_capacity(a as usize + 1);
    let mut ln_binom = 0.0f64;
    for k in 0..=a {
        if k > 0 {
            ln_binom += ((a - k + 1) as f64).ln() - (k as f64).ln();
        }
        let rest = a - k;
        // (1-q)^0 is 1 even when q = 1.
        let ln_rest = if rest == 0 { 0.0 } else { rest as f64 * ln_1mq };
        if ln_rest == f64::NEG_INFINITY {
            continue;
        }
        let kf = k as f64;
        log_terms.push(ln_binom + ln_rest + kf * ln_q + kf * (kf - 1.0) * inv_2s2);
    }
    Ok(log_sum_exp(&log_terms) / (alpha - 1.0))
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Orders used when none are given: every integer in 2..=256, 1.25 and 1.5,
/// and a geometric ladder `1 + 0.01·1.02^i` up to 10⁴ for the closed-form
/// Gaussian terms.
pub fn default_alpha_grid() -> Vec<f64> {
    let mut grid: Vec<f64> = (2..=256).map(f64::from).collect();
    grid.extend([1.25, 1.5]);
    let mut x = 0.01f64;
    while 1.0 + x <= 1e4 {
        let alpha = 1.0 + x;
        if alpha.fract() != 0.0 {
            grid.push(alpha);
        }
        x *= 1.02;
    }
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    grid
}

/// Result of converting an RDP curve to (ε, δ)-DP.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpGuarantee {
    pub epsilon: f64,
    pub delta: f64,
    pub best_alpha: f64,
}

/// `min_α ε(α) + ln(1/δ)/(α-1)` over the orders where the curve is
/// defined.
pub fn rdp_to_dp(curve: &RdpCurve, delta: f64, alpha_grid: &[f64]) -> Result<DpGuarantee> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(GapError::InvalidParameter(format!(
            "delta must lie in (0, 1), got {delta}"
        )));
    }
    if alpha_grid.is_empty() {
        return Err(GapError::EmptyGrid);
    }
    let log_inv_delta = -delta.ln();
    let mut best: Option<(f64, f64)> = None;
    for &alpha in alpha_grid {
        let rdp = match curve.evaluate(alpha) {
            Ok(v) => v,
            Err(GapError::NonIntegerOrder(_)) => continue,
            Err(e) => return Err(e),
        };
        let eps = rdp + log_inv_delta / (alpha - 1.0);
        if best.is_none_or(|(b, _)| eps < b) {
            best = Some((eps, alpha));
        }
    }
    let (epsilon, best_alpha) = best.ok_or(GapError::EmptyGrid)?;
    Ok(DpGuarantee {
        epsilon,
        delta,
        best_alpha,
    })
}

/// Total node-level guarantee of encoder, aggregation and classifier.
pub fn node_level_total(
    pma_curve: &RdpCurve,
    encoder_curve: &RdpCurve,
    classifier_curve: &RdpCurve,
    delta: f64,
    alpha_grid: &[f64],
) -> Result<DpGuarantee> {
    let total = compose(&[
        pma_curve.clone(),
        encoder_curve.clone(),
        classifier_curve.clone(),
    ])?;
    rdp_to_dp(&total, delta, alpha_grid)
}

pub const SIGMA_MIN: f64 = 1e-4;
pub const SIGMA_MAX: f64 = 1e6;
const CALIBRATION_RTOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub sigma: f64,
    pub achieved: DpGuarantee,
}

/// Smallest noise scale (up to the tolerance) whose curve meets the
/// target, found by bracketed bisection. The achieved ε never exceeds the
/// target and lies within 1e-6 relative of it.
pub fn calibrate_sigma<F>(target: &PrivacyBudget, curve_builder: F, alpha_grid: &[f64]) -> Result<Calibration>
where
    F: Fn(f64) -> Result<RdpCurve>,
{
    if !(target.epsilon > 0.0) {
        return Err(GapError::InvalidParameter(format!(
            "epsilon must be positive, got {}",
            target.epsilon
        )));
    }
    let eval = |sigma: f64| -> Result<DpGuarantee> {
        rdp_to_dp(&curve_builder(sigma)?, target.delta, alpha_grid)
    };
    let fail = || GapError::CalibrationFailed {
        target: target.epsilon,
        lo: SIGMA_MIN,
        hi: SIGMA_MAX,
    };

    let mut hi = 1.0;
    let mut at_hi = eval(hi)?;
    while at_hi.epsilon > target.epsilon {
        if hi >= SIGMA_MAX {
            return Err(fail());
        }
        hi = (hi * 2.0).min(SIGMA_MAX);
        at_hi = eval(hi)?;
    }
    let mut lo = hi;
    loop {
        if lo <= SIGMA_MIN {
            // Even the smallest admissible noise meets the target.
            return Ok(Calibration {
                sigma: SIGMA_MIN,
                achieved: eval(SIGMA_MIN)?,
            });
        }
        lo = (lo / 2.0).max(SIGMA_MIN);
        let at_lo = eval(lo)?;
        if at_lo.epsilon > target.epsilon {
            break;
        }
        hi = lo;
        at_hi = at_lo;
    }

    for _ in 0..300 {
        if (target.epsilon - at_hi.epsilon) <= CALIBRATION_RTOL * target.epsilon || hi - lo <= hi * 1e-15 {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let at_mid = eval(mid)?;
        if at_mid.epsilon <= target.epsilon {
            hi = mid;
            at_hi = at_mid;
        } else {
            lo = mid;
        }
    }
    Ok(Calibration {
        sigma: hi,
        achieved: at_hi,
    })
}
