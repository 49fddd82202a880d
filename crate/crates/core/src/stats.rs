//! Small statistics helpers for reporting.

use rand::Rng;

use crate::error::{GapError, Result};
use crate::rng::rng_from;

/// Fraction of positions where `predicted` equals `truth`; 0 for empty input.
pub fn accuracy(predicted: &[usize], truth: &[usize]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    let hits = predicted.iter().zip(truth).filter(|(a, b)| a == b).count();
    hits as f64 / truth.len() as f64
}

pub fn mean(samples: &[f64]) -> f64 {
    samples.iter().sum::<f64>() / samples.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ConfidenceInterval {
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
}

impl ConfidenceInterval {
    pub fn half_width(&self) -> f64 {
        0.5 * (self.hi - self.lo)
    }

    pub fn overlaps(&self, other: &ConfidenceInterval) -> bool {
        self.lo <= other.hi && other.lo <= self.hi
    }
}

pub const DEFAULT_RESAMPLES: usize = 1000;

/// Percentile bootstrap interval of the mean.
pub fn bootstrap_ci(samples: &[f64], resamples: usize, level: f64, seed: u64) -> Result<ConfidenceInterval> {
    if samples.is_empty() {
        return Err(GapError::InvalidParameter("bootstrap needs at least one sample".into()));
    }
    if resamples == 0 || !(level > 0.0 && level < 1.0) {
        return Err(GapError::InvalidParameter(format!(
            "bootstrap needs resamples > 0 and level in (0, 1), got {resamples} and {level}"
        )));
    }
    let n = samples.len();
    let mut rng = rng_from(seed);
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| samples[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    let pick = |p: f64| {
        let idx = (p * (resamples - 1) as f64).round() as usize;
        means[idx.min(resamples - 1)]
    };
    let m = mean(samples);
    Ok(ConfidenceInterval {
        mean: m,
        lo: pick(tail).min(m),
        hi: pick(1.0 - tail).max(m),
    })
}
