//! Warmup schedule for the confidence-margin weights.
//!
//! Raw weights are unreliable while the feature bank is still finding its
//! feet, so their influence ramps in linearly: at progress 0 every sample
//! weighs 1 (plain unweighted training) and from `warmup_fraction` onward
//! the (optionally batch-normalized) raw weights apply in full.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

#[derive(Clone, Debug, PartialEq)]
pub enum ReweightError {
    ProgressOutOfRange(f64),
    BadPolicy(&'static str),
}

impl fmt::Display for ReweightError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ReweightError::ProgressOutOfRange(p) => write!(f, "progress {p} outside [0, 1]"),
            ReweightError::BadPolicy(what) => write!(f, "bad warmup policy: {what}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for ReweightError {}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct WarmupPolicy {
    /// Fraction of training over which the weights ramp in.
    pub warmup_fraction: f64,
    /// Rescale each batch's weights to mean 1 so the classification loss
    /// keeps the unweighted scale.
    pub normalize_batch: bool,
}

impl Default for WarmupPolicy {
    fn default() -> Self {
        WarmupPolicy { warmup_fraction: 0.5, normalize_batch: true }
    }
}

impl WarmupPolicy {
    pub fn validate(&self) -> Result<(), ReweightError> {
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            return Err(ReweightError::BadPolicy("warmup_fraction must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Blend-in factor at `progress`: 0 at the start, 1 once past the
    /// warmup fraction.
    pub fn gamma(&self, progress: f64) -> f64 {
        if progress >= self.warmup_fraction {
            1.0
        } else {
            progress / self.warmup_fraction
        }
    }
}

/// Effective per-sample weights at `progress` through training:
/// `(1 - gamma) * 1 + gamma * w_tilde`, where `w_tilde` is the raw weight,
/// batch-normalized to mean 1 when the policy says so (an all-zero batch
/// normalizes to zero).
pub fn effective_weights(
    raw: &[f64],
    progress: f64,
    policy: &WarmupPolicy,
) -> Result<Vec<f64>, ReweightError> {
    if !(0.0..=1.0).contains(&progress) {
        return Err(ReweightError::ProgressOutOfRange(progress));
    }
    policy.validate()?;
    if raw.is_empty() {
        return Ok(Vec::new());
    }
    let gamma = policy.gamma(progress);
    let mut tilde: Vec<f64> = raw.to_vec();
    if policy.normalize_batch {
        let sum: f64 = raw.iter().sum();
        if sum > 0.0 {
            let scale = raw.len() as f64 / sum;
            tilde.iter_mut().for_each(|w| *w *= scale);
        } else {
            tilde = vec![0.0; raw.len()];
        }
    }
    Ok(tilde.into_iter().map(|w| (1.0 - gamma) + gamma * w).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn progress_zero_means_unweighted() {
        let raw = [0.3, 2.1, 0.0, 1.4];
        let w = effective_weights(&raw, 0.0, &WarmupPolicy::default()).unwrap();
        assert!(w.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn equal_positive_weights_are_a_fixed_point() {
        let raw = [0.42; 6];
        for progress in [0.5, 0.7, 1.0] {
            let w = effective_weights(&raw, progress, &WarmupPolicy::default()).unwrap();
            for &v in &w {
                assert!((v - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn normalized_pair_example() {
        // raw (0, e) at full progress: normalization maps to (0, 2)
        let raw = [0.0, core::f64::consts::E];
        let w = effective_weights(&raw, 1.0, &WarmupPolicy::default()).unwrap();
        assert!((w[0] - 0.0).abs() < 1e-12);
        assert!((w[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn mean_is_preserved_at_every_progress() {
        let mut rng = Rng::new(5);
        let policy = WarmupPolicy::default();
        for _ in 0..100 {
            let n = 1 + rng.below(16);
            let raw: Vec<f64> = (0..n).map(|_| rng.next_f64() * core::f64::consts::E).collect();
            let progress = rng.next_f64();
            let w = effective_weights(&raw, progress, &policy).unwrap();
            let mean: f64 = w.iter().sum::<f64>() / n as f64;
            assert!((mean - 1.0).abs() < 1e-9, "mean {mean}");
        }
    }

    #[test]
    fn all_zero_batch_fades_to_zero() {
        let raw = [0.0; 4];
        let w = effective_weights(&raw, 1.0, &WarmupPolicy::default()).unwrap();
        assert!(w.iter().all(|&v| v == 0.0));
        // halfway through warmup, half baseline weight remains
        let w = effective_weights(&raw, 0.25, &WarmupPolicy::default()).unwrap();
        assert!(w.iter().all(|&v| (v - 0.5).abs() < 1e-12));
    }

    #[test]
    fn continuous_in_progress() {
        let raw = [0.1, 1.9, 0.7];
        let policy = WarmupPolicy::default();
        let mut prev = effective_weights(&raw, 0.0, &policy).unwrap();
        let steps = 1000;
        for s in 1..=steps {
            let p = s as f64 / steps as f64;
            let cur = effective_weights(&raw, p, &policy).unwrap();
            for (a, b) in prev.iter().zip(&cur) {
                assert!((a - b).abs() < 0.01, "jump at {p}");
            }
            prev = cur;
        }
    }

    #[test]
    fn zero_warmup_fraction_applies_weights_immediately() {
        let policy = WarmupPolicy { warmup_fraction: 0.0, normalize_batch: false };
        let w = effective_weights(&[0.5, 1.5], 0.0, &policy).unwrap();
        assert_eq!(w, vec![0.5, 1.5]);
    }

    #[test]
    fn rejects_bad_progress() {
        assert!(matches!(
            effective_weights(&[1.0], 1.5, &WarmupPolicy::default()),
            Err(ReweightError::ProgressOutOfRange(_))
        ));
        assert!(effective_weights(&[1.0], -0.1, &WarmupPolicy::default()).is_err());
    }
}
