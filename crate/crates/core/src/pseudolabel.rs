//! Pseudo-label refinement: a FIFO bank of (feature, probability) pairs,
//! k-nearest-neighbor soft voting over it, and the confidence-margin weight
//! each refined label carries into the classification loss.
//!
//! The bank is fed by the momentum model on weakly augmented images, so the
//! feature space it represents drifts slowly even while the main model
//! trains. A query's pseudo-label is the argmax of its k nearest neighbors'
//! averaged probability vectors (cosine similarity on unit features), and
//! its weight is `p_top1 * margin * exp(margin)` computed from that same
//! average — reliable votes get amplified, ambiguous ones fade out.

use crate::model::{ModelError, ParamSet};
use crate::real::{exp64, sqrt64, Real};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

#[derive(Clone, Debug, PartialEq)]
pub enum BankError {
    /// Stored features must be unit-norm (tolerance 1e-3).
    NotUnitNorm { norm: f64 },
    /// Probability vectors must be non-negative and sum to 1 (tolerance 1e-3).
    NotADistribution { sum: f64 },
    DimensionMismatch { expected: usize, got: usize },
    /// Snapshot bytes are truncated or inconsistent.
    BadSnapshot(&'static str),
}

impl fmt::Display for BankError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BankError::NotUnitNorm { norm } => {
                write!(f, "feature norm {norm} deviates from 1 by more than 1e-3")
            }
            BankError::NotADistribution { sum } => {
                write!(f, "probability vector sums to {sum}")
            }
            BankError::DimensionMismatch { expected, got } => {
                write!(f, "dimension mismatch: expected {expected}, got {got}")
            }
            BankError::BadSnapshot(what) => write!(f, "bad bank snapshot: {what}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for BankError {}

/// A refined pseudo-label and its reliability statistics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PseudoLabel {
    pub label: usize,
    /// Probability of the top class in the averaged neighbor distribution.
    pub p_top1: f64,
    /// Gap between the top two probabilities of that distribution.
    pub margin: f64,
    /// `p_top1 * margin * exp(margin)`, in `[0, e]`; zero during cold start.
    pub weight: f64,
}

/// FIFO memory of `(unit feature, probability vector)` pairs.
///
/// `cursor` counts every item ever enqueued; the write slot is `cursor %
/// capacity` and the fill level is `min(cursor, capacity)`, so the counter
/// alone pins down the queue state.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureBank {
    capacity: usize,
    dim: usize,
    classes: usize,
    features: Vec<f64>,
    probs: Vec<f64>,
    cursor: u64,
}

impl FeatureBank {
    pub fn new(capacity: usize, dim: usize, classes: usize) -> Self {
        FeatureBank {
            capacity,
            dim,
            classes,
            features: vec![0.0; capacity * dim],
            probs: vec![0.0; capacity * classes],
            cursor: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn len(&self) -> usize {
        (self.cursor as usize).min(self.capacity)
    }

    pub fn is_empty(&self) -> bool {
        self.cursor == 0
    }

    pub fn feature(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn prob(&self, i: usize) -> &[f64] {
        &self.probs[i * self.classes..(i + 1) * self.classes]
    }

    /// Append a batch, evicting the oldest entries once full.
    pub fn enqueue(&mut self, feats: &[f64], probs: &[f64]) -> Result<(), BankError> {
        if feats.len() % self.dim != 0 {
            return Err(BankError::DimensionMismatch { expected: self.dim, got: feats.len() });
        }
        let n = feats.len() / self.dim;
        if probs.len() != n * self.classes {
            return Err(BankError::DimensionMismatch {
                expected: n * self.classes,
                got: probs.len(),
            });
        }
        // validate everything before mutating
        for i in 0..n {
            let f = &feats[i * self.dim..(i + 1) * self.dim];
            let norm = sqrt64(f.iter().map(|v| v * v).sum());
            if (norm - 1.0).abs() > 1e-3 {
                return Err(BankError::NotUnitNorm { norm });
            }
            let p = &probs[i * self.classes..(i + 1) * self.classes];
            let sum: f64 = p.iter().sum();
            if p.iter().any(|&v| v < 0.0) || (sum - 1.0).abs() > 1e-3 {
                return Err(BankError::NotADistribution { sum });
            }
        }
        for i in 0..n {
            let slot = (self.cursor as usize) % self.capacity;
            self.features[slot * self.dim..(slot + 1) * self.dim]
                .copy_from_slice(&feats[i * self.dim..(i + 1) * self.dim]);
            self.probs[slot * self.classes..(slot + 1) * self.classes]
                .copy_from_slice(&probs[i * self.classes..(i + 1) * self.classes]);
            self.cursor += 1;
        }
        Ok(())
    }

    /// Flat binary snapshot: `[u64 capacity][u64 dim][u64 classes]
    /// [u64 cursor]` then row-major features and probs as little-endian
    /// `f64`, all `capacity` slots (unfilled slots are zero).
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + 8 * (self.features.len() + self.probs.len()));
        for v in [self.capacity as u64, self.dim as u64, self.classes as u64, self.cursor] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for &v in self.features.iter().chain(&self.probs) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, BankError> {
        if bytes.len() < 32 {
            return Err(BankError::BadSnapshot("header truncated"));
        }
        let mut head = [0u8; 8];
        let mut word = |i: usize| {
            head.copy_from_slice(&bytes[i * 8..(i + 1) * 8]);
            u64::from_le_bytes(head)
        };
        let capacity = word(0) as usize;
        let dim = word(1) as usize;
        let classes = word(2) as usize;
        let cursor = word(3);
        let want = 32 + 8 * capacity * (dim + classes);
        if bytes.len() != want {
            return Err(BankError::BadSnapshot("payload length mismatch"));
        }
        let mut vals = bytes[32..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")));
        let features: Vec<f64> = vals.by_ref().take(capacity * dim).collect();
        let probs: Vec<f64> = vals.collect();
        Ok(FeatureBank { capacity, dim, classes, features, probs, cursor })
    }
}

/// Confidence, margin, and the Eq.-style weight of an averaged probability
/// vector. Ties in the argmax resolve to the lowest index.
pub fn compute_weight(avg_probs: &[f64]) -> (f64, f64, f64) {
    debug_assert!(avg_probs.len() >= 2);
    let (mut top1, mut top2) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &p in avg_probs {
        if p > top1 {
            top2 = top1;
            top1 = p;
        } else if p > top2 {
            top2 = p;
        }
    }
    let margin = top1 - top2;
    (top1, margin, top1 * margin * exp64(margin))
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate().skip(1) {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

/// Refine a query into a pseudo-label by k-NN soft voting over the bank.
///
/// Neighbors are the `k` stored entries with the highest cosine similarity
/// to the unit-norm query (ties broken toward lower indices); their
/// probability vectors are averaged in neighbor order and the label,
/// confidence, margin, and weight all come from that average.
///
/// Cold start: while the bank holds fewer than `k` entries, the label falls
/// back to the argmax of `self_probs` (the momentum model's own prediction)
/// with weight forced to zero, so the sample still feeds the contrastive
/// and diversity terms without polluting the classification loss.
pub fn refine(
    bank: &FeatureBank,
    query: &[f64],
    self_probs: &[f64],
    k: usize,
) -> Result<PseudoLabel, BankError> {
    if query.len() != bank.dim() {
        return Err(BankError::DimensionMismatch { expected: bank.dim(), got: query.len() });
    }
    if self_probs.len() != bank.classes() {
        return Err(BankError::DimensionMismatch {
            expected: bank.classes(),
            got: self_probs.len(),
        });
    }
    let norm = sqrt64(query.iter().map(|v| v * v).sum());
    if (norm - 1.0).abs() > 1e-3 {
        return Err(BankError::NotUnitNorm { norm });
    }

    if bank.len() < k || k == 0 {
        let (p_top1, margin, _) = compute_weight(self_probs);
        return Ok(PseudoLabel { label: argmax(self_probs), p_top1, margin, weight: 0.0 });
    }

    let neighbors = nearest_neighbors(bank, query, k);
    let mut avg = vec![0.0; bank.classes()];
    for &idx in &neighbors {
        for (a, &p) in avg.iter_mut().zip(bank.prob(idx)) {
            *a += p;
        }
    }
    for a in &mut avg {
        *a /= k as f64;
    }
    let (p_top1, margin, weight) = compute_weight(&avg);
    Ok(PseudoLabel { label: argmax(&avg), p_top1, margin, weight })
}

/// Indices of the `k` most cosine-similar bank entries, in selection order
/// (best first; similarity ties go to the lower index).
pub fn nearest_neighbors(bank: &FeatureBank, query: &[f64], k: usize) -> Vec<usize> {
    let len = bank.len();
    let mut sims: Vec<(f64, usize)> = (0..len)
        .map(|i| {
            let dot: f64 = bank.feature(i).iter().zip(query).map(|(a, b)| a * b).sum();
            (dot, i)
        })
        .collect();
    // sort by similarity descending, index ascending
    sims.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    sims.truncate(k);
    sims.into_iter().map(|(_, i)| i).collect()
}

/// `theta_m <- m * theta_m + (1 - m) * theta`, elementwise.
pub fn momentum_update<R: Real>(
    theta_m: &mut ParamSet<R>,
    theta: &ParamSet<R>,
    m: f64,
) -> Result<(), ModelError> {
    if !theta_m.congruent_with(theta) {
        return Err(ModelError::ShapeMismatch("momentum update parameter sets".into()));
    }
    if !(0.0..=1.0).contains(&m) {
        return Err(ModelError::BadConfig("momentum must lie in [0, 1]".into()));
    }
    let m = R::from_f64(m);
    let one_minus = R::ONE - m;
    for (tm, t) in theta_m.tensors_mut().iter_mut().zip(theta.tensors()) {
        for (a, &b) in tm.data.iter_mut().zip(&t.data) {
            *a = m * *a + one_minus * b;
        }
    }
    Ok(())
}
