//! The three adaptation losses and their input-side gradients.
//!
//! * weighted cross-entropy: each sample's CE against its pseudo-label is
//!   scaled by the confidence-margin weight;
//! * diversity: negative entropy of the batch-mean prediction, pushing the
//!   model away from predicting one class for everything;
//! * contrastive: InfoNCE between two strong views against a queue of past
//!   keys, with negatives sharing the query's pseudo-label excluded.
//!
//! The total is the plain unweighted sum. Logs are clamped at `ln(1e-12)`
//! everywhere, and the gradient helpers treat clamped entries as constants
//! so the analytic gradients match finite differences exactly.

use crate::real::Real;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

pub const LOG_CLAMP: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub enum LossError {
    NegativeWeight(f64),
    ShapeMismatch { what: &'static str },
    NotUnitNorm { norm: f64 },
    BadTemperature(f64),
}

impl fmt::Display for LossError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LossError::NegativeWeight(w) => write!(f, "negative sample weight {w}"),
            LossError::ShapeMismatch { what } => write!(f, "shape mismatch in {what}"),
            LossError::NotUnitNorm { norm } => {
                write!(f, "vector norm {norm} deviates from 1 by more than 1e-5")
            }
            LossError::BadTemperature(t) => write!(f, "temperature {t} must be positive"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for LossError {}

/// Per-step loss report. `l_total` is the sum of the three terms in the
/// order written: `l_ce + l_ctr + l_div`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub l_ce: f64,
    pub l_div: f64,
    pub l_ctr: f64,
    pub l_total: f64,
}

/// Sum the three components; no coefficients.
pub fn total_loss(l_ce: f64, l_ctr: f64, l_div: f64) -> LossBreakdown {
    LossBreakdown { l_ce, l_div, l_ctr, l_total: l_ce + l_ctr + l_div }
}

#[inline]
fn clamped_ln<R: Real>(p: R) -> R {
    p.maximum(R::from_f64(LOG_CLAMP)).ln()
}

/// `-mean_i w_i * ln p_i[y_i]`: cross-entropy against pseudo-labels, scaled
/// per sample.
pub fn weighted_ce<R: Real>(
    pred_probs: &[R],
    classes: usize,
    pseudo_labels: &[usize],
    weights: &[R],
) -> Result<R, LossError> {
    let b = pseudo_labels.len();
    if pred_probs.len() != b * classes || weights.len() != b {
        return Err(LossError::ShapeMismatch { what: "weighted_ce inputs" });
    }
    for &w in weights {
        if !(w.to_f64() >= 0.0) || !w.is_finite() {
            return Err(LossError::NegativeWeight(w.to_f64()));
        }
    }
    let mut sum = R::ZERO;
    for i in 0..b {
        let p = pred_probs[i * classes + pseudo_labels[i]];
        sum += weights[i] * clamped_ln(p);
    }
    Ok(-sum / R::from_f64(b as f64))
}

/// Gradient of [`weighted_ce`] w.r.t. the logits: `(w_i / B) * (p_i - y_i)`.
/// Samples whose target probability hit the log clamp contribute nothing.
pub fn weighted_ce_logit_grad<R: Real>(
    pred_probs: &[R],
    classes: usize,
    pseudo_labels: &[usize],
    weights: &[R],
) -> Vec<R> {
    let b = pseudo_labels.len();
    let inv_b = R::from_f64(1.0 / b as f64);
    let mut grad = vec![R::ZERO; b * classes];
    for i in 0..b {
        let row = &pred_probs[i * classes..(i + 1) * classes];
        if row[pseudo_labels[i]].to_f64() <= LOG_CLAMP {
            continue;
        }
        let scale = weights[i] * inv_b;
        let out = &mut grad[i * classes..(i + 1) * classes];
        for (g, &p) in out.iter_mut().zip(row) {
            *g = scale * p;
        }
        out[pseudo_labels[i]] -= scale;
    }
    grad
}

/// Negative entropy of the batch-mean prediction,
/// `sum_c mean_p[c] * ln mean_p[c]`; minimized (at `-ln C`) when the mean
/// prediction is uniform.
pub fn diversity_loss<R: Real>(pred_probs: &[R], classes: usize) -> R {
    let b = pred_probs.len() / classes;
    let mut mean = vec![R::ZERO; classes];
    for i in 0..b {
        for (m, &p) in mean.iter_mut().zip(&pred_probs[i * classes..(i + 1) * classes]) {
            *m += p;
        }
    }
    let inv_b = R::from_f64(1.0 / b as f64);
    let mut loss = R::ZERO;
    for m in &mut mean {
        *m *= inv_b;
        loss += *m * clamped_ln(*m);
    }
    loss
}

/// Gradient of [`diversity_loss`] w.r.t. the logits, through the softmax of
/// every sample and the batch mean.
pub fn diversity_logit_grad<R: Real>(pred_probs: &[R], classes: usize) -> Vec<R> {
    let b = pred_probs.len() / classes;
    let inv_b = R::from_f64(1.0 / b as f64);
    let mut mean = vec![R::ZERO; classes];
    for i in 0..b {
        for (m, &p) in mean.iter_mut().zip(&pred_probs[i * classes..(i + 1) * classes]) {
            *m += p;
        }
    }
    // d loss / d mean_c = ln(mean_c) + 1, zero where the clamp bites
    let mut d_mean = vec![R::ZERO; classes];
    for (d, m) in d_mean.iter_mut().zip(&mean) {
        let m = *m * inv_b;
        if m.to_f64() > LOG_CLAMP {
            *d = m.ln() + R::ONE;
        }
    }
    // chain through each sample's softmax
    let mut grad = vec![R::ZERO; b * classes];
    for i in 0..b {
        let p = &pred_probs[i * classes..(i + 1) * classes];
        let dot = d_mean.iter().zip(p).fold(R::ZERO, |acc, (d, &pv)| acc + *d * pv);
        let out = &mut grad[i * classes..(i + 1) * classes];
        for c in 0..classes {
            out[c] = inv_b * p[c] * (d_mean[c] - dot);
        }
    }
    grad
}

/// Cross-entropy against label-smoothed targets,
/// `q = (1 - eps) * onehot + eps / C`; used for source pre-training, where
/// smoothing keeps the logit scale bounded so the model stays adaptable.
pub fn smoothed_ce<R: Real>(
    pred_probs: &[R],
    classes: usize,
    labels: &[usize],
    epsilon: f64,
) -> Result<R, LossError> {
    let b = labels.len();
    if pred_probs.len() != b * classes || !(0.0..1.0).contains(&epsilon) {
        return Err(LossError::ShapeMismatch { what: "smoothed_ce inputs" });
    }
    let off = R::from_f64(epsilon / classes as f64);
    let on = R::from_f64(1.0 - epsilon) + off;
    let mut sum = R::ZERO;
    for (i, &y) in labels.iter().enumerate() {
        let row = &pred_probs[i * classes..(i + 1) * classes];
        for (c, &p) in row.iter().enumerate() {
            let q = if c == y { on } else { off };
            sum += q * clamped_ln(p);
        }
    }
    Ok(-sum / R::from_f64(b as f64))
}

/// Gradient of [`smoothed_ce`] w.r.t. the logits: `(p - q) / B`.
pub fn smoothed_ce_logit_grad<R: Real>(
    pred_probs: &[R],
    classes: usize,
    labels: &[usize],
    epsilon: f64,
) -> Vec<R> {
    let b = labels.len();
    let inv_b = R::from_f64(1.0 / b as f64);
    let off = R::from_f64(epsilon / classes as f64);
    let on = R::from_f64(1.0 - epsilon) + off;
    let mut grad = vec![R::ZERO; b * classes];
    for (i, &y) in labels.iter().enumerate() {
        let row = &pred_probs[i * classes..(i + 1) * classes];
        let out = &mut grad[i * classes..(i + 1) * classes];
        for (c, (&p, g)) in row.iter().zip(out.iter_mut()).enumerate() {
            let q = if c == y { on } else { off };
            *g = (p - q) * inv_b;
        }
    }
    grad
}

/// Inputs to the contrastive term. `queries` come from the trainable model
/// on one strong view, `keys` from the momentum model on the other;
/// `negatives` are queued past keys with the pseudo-label they carried when
/// enqueued.
#[derive(Clone, Copy, Debug)]
pub struct ContrastiveBatch<'a, R> {
    pub dim: usize,
    pub queries: &'a [R],
    pub keys: &'a [R],
    pub negatives: &'a [R],
    pub query_labels: &'a [usize],
    pub negative_labels: &'a [usize],
    pub temperature: f64,
}

impl<R: Real> ContrastiveBatch<'_, R> {
    fn validate(&self) -> Result<(usize, usize), LossError> {
        if self.temperature <= 0.0 {
            return Err(LossError::BadTemperature(self.temperature));
        }
        if self.dim == 0
            || self.queries.len() % self.dim != 0
            || self.negatives.len() % self.dim != 0
        {
            return Err(LossError::ShapeMismatch { what: "contrastive vector dims" });
        }
        let b = self.queries.len() / self.dim;
        let m = self.negatives.len() / self.dim;
        if self.keys.len() != b * self.dim
            || self.query_labels.len() != b
            || self.negative_labels.len() != m
        {
            return Err(LossError::ShapeMismatch { what: "contrastive batch sizes" });
        }
        for v in self
            .queries
            .chunks_exact(self.dim)
            .chain(self.keys.chunks_exact(self.dim))
            .chain(self.negatives.chunks_exact(self.dim))
        {
            let norm = crate::kernels::l2_norm(v).to_f64();
            if (norm - 1.0).abs() > 1e-5 {
                return Err(LossError::NotUnitNorm { norm });
            }
        }
        Ok((b, m))
    }
}

fn dot<R: Real>(a: &[R], b: &[R]) -> R {
    a.iter().zip(b).fold(R::ZERO, |acc, (x, y)| acc + *x * *y)
}

/// InfoNCE over the queue, averaged over queries. Negatives whose stored
/// pseudo-label equals the query's are excluded from the denominator; a
/// query with no surviving negatives contributes exactly zero.
pub fn contrastive_loss<R: Real>(batch: &ContrastiveBatch<'_, R>) -> Result<R, LossError> {
    let (b, m) = batch.validate()?;
    if b == 0 {
        return Ok(R::ZERO);
    }
    let inv_t = R::from_f64(1.0 / batch.temperature);
    let mut total = R::ZERO;
    let mut scores: Vec<R> = Vec::with_capacity(m + 1);
    for i in 0..b {
        let q = &batch.queries[i * batch.dim..(i + 1) * batch.dim];
        let pos = dot(q, &batch.keys[i * batch.dim..(i + 1) * batch.dim]) * inv_t;
        scores.clear();
        scores.push(pos);
        for j in 0..m {
            if batch.negative_labels[j] == batch.query_labels[i] {
                continue;
            }
            scores.push(dot(q, &batch.negatives[j * batch.dim..(j + 1) * batch.dim]) * inv_t);
        }
        // stable log-sum-exp; a lone positive cancels to exactly zero
        let mut max = scores[0];
        for &s in &scores[1..] {
            max = max.maximum(s);
        }
        let mut sum = R::ZERO;
        for &s in &scores {
            sum += (s - max).exp();
        }
        total += max + sum.ln() - pos;
    }
    Ok(total / R::from_f64(b as f64))
}

/// Gradient of [`contrastive_loss`] w.r.t. the (normalized) query vectors;
/// keys and negatives are constants from the momentum path.
pub fn contrastive_query_grad<R: Real>(batch: &ContrastiveBatch<'_, R>) -> Result<Vec<R>, LossError> {
    let (b, m) = batch.validate()?;
    let mut grad = vec![R::ZERO; b * batch.dim];
    if b == 0 {
        return Ok(grad);
    }
    let inv_t = R::from_f64(1.0 / batch.temperature);
    let inv_b = R::from_f64(1.0 / b as f64);
    let mut scores: Vec<R> = Vec::with_capacity(m + 1);
    let mut picked: Vec<usize> = Vec::with_capacity(m);
    for i in 0..b {
        let q = &batch.queries[i * batch.dim..(i + 1) * batch.dim];
        let key = &batch.keys[i * batch.dim..(i + 1) * batch.dim];
        scores.clear();
        picked.clear();
        scores.push(dot(q, key) * inv_t);
        for j in 0..m {
            if batch.negative_labels[j] == batch.query_labels[i] {
                continue;
            }
            picked.push(j);
            scores.push(dot(q, &batch.negatives[j * batch.dim..(j + 1) * batch.dim]) * inv_t);
        }
        let mut max = scores[0];
        for &s in &scores[1..] {
            max = max.maximum(s);
        }
        let mut denom = R::ZERO;
        for &s in &scores {
            denom += (s - max).exp();
        }
        let out = &mut grad[i * batch.dim..(i + 1) * batch.dim];
        // softmax over {positive, negatives}; d loss_i / d q
        let sigma_pos = (scores[0] - max).exp() / denom;
        let coef_pos = (sigma_pos - R::ONE) * inv_t * inv_b;
        for (g, &kv) in out.iter_mut().zip(key) {
            *g += coef_pos * kv;
        }
        for (rank, &j) in picked.iter().enumerate() {
            let sigma = (scores[rank + 1] - max).exp() / denom;
            let coef = sigma * inv_t * inv_b;
            let neg = &batch.negatives[j * batch.dim..(j + 1) * batch.dim];
            for (g, &nv) in out.iter_mut().zip(neg) {
                *g += coef * nv;
            }
        }
    }
    Ok(grad)
}

/// FIFO queue of contrastive keys and the pseudo-label each carried when it
/// was enqueued (same eviction rule as the feature bank).
#[derive(Clone, Debug, PartialEq)]
pub struct KeyQueue<R> {
    capacity: usize,
    dim: usize,
    keys: Vec<R>,
    labels: Vec<usize>,
    cursor: u64,
}

impl<R: Real> KeyQueue<R> {
    pub fn new(capacity: usize, dim: usize) -> Self {
        KeyQueue {
            capacity,
            dim,
            keys: vec![R::ZERO; capacity * dim],
            labels: vec![0; capacity],
            cursor: 0,
        }
    }

    pub fn len(&self) -> usize {
        (self.cursor as usize).min(self.capacity)
    }

    pub fn is_empty(&self) -> bool {
        self.cursor == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn enqueue(&mut self, keys: &[R], labels: &[usize]) -> Result<(), LossError> {
        if keys.len() % self.dim != 0 || keys.len() / self.dim != labels.len() {
            return Err(LossError::ShapeMismatch { what: "key queue enqueue" });
        }
        for v in keys.chunks_exact(self.dim) {
            let norm = crate::kernels::l2_norm(v).to_f64();
            if (norm - 1.0).abs() > 1e-3 {
                return Err(LossError::NotUnitNorm { norm });
            }
        }
        for (i, &label) in labels.iter().enumerate() {
            let slot = (self.cursor as usize) % self.capacity;
            self.keys[slot * self.dim..(slot + 1) * self.dim]
                .copy_from_slice(&keys[i * self.dim..(i + 1) * self.dim]);
            self.labels[slot] = label;
            self.cursor += 1;
        }
        Ok(())
    }

    /// Currently held keys and labels (first `len` slots).
    pub fn negatives(&self) -> (&[R], &[usize]) {
        let n = self.len();
        (&self.keys[..n * self.dim], &self.labels[..n])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::real::{exp64, ln64};
    use crate::rng::Rng;

    fn softmax(z: &[f64]) -> Vec<f64> {
        let mx = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = z.iter().map(|v| exp64(v - mx)).collect();
        let s: f64 = e.iter().sum();
        e.into_iter().map(|v| v / s).collect()
    }

    #[test]
    fn zero_weights_zero_loss() {
        let probs = [0.2, 0.8, 0.6, 0.4];
        let loss = weighted_ce(&probs, 2, &[0, 1], &[0.0, 0.0]).unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn single_sample_ce_identity() {
        let loss = weighted_ce(&[0.25, 0.75], 2, &[0], &[1.0]).unwrap();
        assert!((loss - 1.386_294_361_119_890_6).abs() < 1e-12);
        assert!((loss + ln64(0.25)).abs() < 1e-12);
    }

    #[test]
    fn weighted_batch_matches_scalar_loop() {
        let probs = [0.2, 0.5, 0.3, 0.6, 0.1, 0.3];
        let labels = [2usize, 0];
        let weights = [1.0, 2.0];
        let loss = weighted_ce(&probs, 3, &labels, &weights).unwrap();

        // plain scalar recomputation
        let c1 = -ln64(0.3);
        let c2 = -ln64(0.6);
        let want = (1.0 * c1 + 2.0 * c2) / 2.0;
        assert!((loss - want).abs() < 1e-12);
    }

    #[test]
    fn doubling_weights_doubles_ce() {
        let mut rng = Rng::new(1);
        let b = 8;
        let c = 4;
        let mut probs = Vec::new();
        let mut labels = Vec::new();
        let mut weights = Vec::new();
        for i in 0..b {
            let z: Vec<f64> = (0..c).map(|_| rng.next_f64() * 4.0 - 2.0).collect();
            probs.extend(softmax(&z));
            labels.push(i % c);
            weights.push(rng.next_f64() * 2.0);
        }
        let base = weighted_ce(&probs, c, &labels, &weights).unwrap();
        let doubled: Vec<f64> = weights.iter().map(|w| w * 2.0).collect();
        let twice = weighted_ce(&probs, c, &labels, &doubled).unwrap();
        assert_eq!(twice, base * 2.0);
    }

    #[test]
    fn negative_weight_rejected() {
        assert!(matches!(
            weighted_ce(&[0.5, 0.5], 2, &[0], &[-0.1]),
            Err(LossError::NegativeWeight(_))
        ));
    }

    #[test]
    fn diversity_examples() {
        // batch whose mean is uniform over 4 classes
        let probs = [
            1.0, 0.0, 0.0, 0.0, //
            0.0, 1.0, 0.0, 0.0, //
            0.0, 0.0, 1.0, 0.0, //
            0.0, 0.0, 0.0, 1.0,
        ];
        let loss: f64 = diversity_loss(&probs, 4);
        assert!((loss + ln64(4.0)).abs() < 1e-12);

        // everyone predicts class 0: collapse, maximal loss (~0)
        let collapsed = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0];
        let loss: f64 = diversity_loss(&collapsed, 4);
        assert!(loss.abs() < 1e-9);

        // mean (0.7, 0.3)
        let two = [0.7, 0.3, 0.7, 0.3];
        let loss: f64 = diversity_loss(&two, 2);
        let want = 0.7 * ln64(0.7) + 0.3 * ln64(0.3);
        assert!((loss - want).abs() < 1e-12);
        assert!((loss + 0.610_864).abs() < 1e-6);
    }

    #[test]
    fn diversity_bounds() {
        let mut rng = Rng::new(2);
        for classes in [2usize, 4, 7] {
            for _ in 0..200 {
                let b = 1 + rng.below(6);
                let mut probs = Vec::new();
                for _ in 0..b {
                    let z: Vec<f64> = (0..classes).map(|_| rng.next_f64() * 6.0 - 3.0).collect();
                    probs.extend(softmax(&z));
                }
                let loss: f64 = diversity_loss(&probs, classes);
                assert!(loss >= -ln64(classes as f64) - 1e-9);
                assert!(loss <= 1e-9);
            }
        }
    }

    #[test]
    fn diversity_grad_matches_hand_chain_rule_two_by_two() {
        // two samples, two classes: worked fully by the chain rule
        let logits = [0.3, -0.1, 0.2, 0.5];
        let p1 = softmax(&logits[0..2]);
        let p2 = softmax(&logits[2..4]);
        let probs = [p1[0], p1[1], p2[0], p2[1]];

        // hand derivation:
        //   mean_c = (p1_c + p2_c) / 2
        //   dL/dmean_c = ln(mean_c) + 1
        //   dmean_c/dz_{i,c'} = (1/2) p_i_c (delta - p_i_c')
        let mean = [(p1[0] + p2[0]) / 2.0, (p1[1] + p2[1]) / 2.0];
        let dl_dmean = [ln64(mean[0]) + 1.0, ln64(mean[1]) + 1.0];
        let mut hand = [0.0; 4];
        for i in 0..2 {
            let p = if i == 0 { &p1 } else { &p2 };
            for cp in 0..2 {
                let mut acc = 0.0;
                for c in 0..2 {
                    let jac = p[c] * ((c == cp) as usize as f64 - p[cp]);
                    acc += dl_dmean[c] * 0.5 * jac;
                }
                hand[i * 2 + cp] = acc;
            }
        }

        let got = diversity_logit_grad(&probs, 2);
        for (g, h) in got.iter().zip(&hand) {
            assert!((g - h).abs() < 1e-12, "{g} vs {h}");
        }

        // and both agree with central differences on the logits
        for j in 0..4 {
            let h = 1e-6;
            let mut zp = logits;
            zp[j] += h;
            let mut zm = logits;
            zm[j] -= h;
            let probs_of = |z: &[f64; 4]| {
                let a = softmax(&z[0..2]);
                let b = softmax(&z[2..4]);
                [a[0], a[1], b[0], b[1]]
            };
            let fd = (diversity_loss(&probs_of(&zp), 2) - diversity_loss(&probs_of(&zm), 2)) / (2.0 * h);
            assert!((got[j] - fd).abs() < 1e-8, "logit {j}: {} vs {fd}", got[j]);
        }
    }

    fn orthonormal_batch() -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let dim = 8;
        let mut q = vec![0.0; dim];
        q[0] = 1.0;
        let key = q.clone();
        let mut negatives = vec![0.0; 4 * dim];
        for j in 0..4 {
            negatives[j * dim + j + 1] = 1.0;
        }
        (q, key, negatives)
    }

    #[test]
    fn contrastive_closed_form_orthogonal() {
        let (q, k, negatives) = orthonormal_batch();
        let batch = ContrastiveBatch {
            dim: 8,
            queries: &q,
            keys: &k,
            negatives: &negatives,
            query_labels: &[0],
            negative_labels: &[1, 2, 3, 1],
            temperature: 0.07,
        };
        let loss: f64 = contrastive_loss(&batch).unwrap();
        // -ln(e^{1/t} / (e^{1/t} + 4)) evaluated stably
        let want = ln64(1.0 + 4.0 * exp64(-1.0 / 0.07));
        assert!((loss - want).abs() < 1e-12, "{loss} vs {want}");
        assert!((loss - 2.49e-6).abs() < 1e-7);
    }

    #[test]
    fn contrastive_same_class_negatives_excluded() {
        let (q, k, negatives) = orthonormal_batch();
        let all_same = ContrastiveBatch {
            dim: 8,
            queries: &q,
            keys: &k,
            negatives: &negatives,
            query_labels: &[0],
            negative_labels: &[0, 0, 0, 0],
            temperature: 0.07,
        };
        let loss: f64 = contrastive_loss(&all_same).unwrap();
        assert_eq!(loss, 0.0);

        // adding a same-class negative changes nothing, bit for bit
        let mut extended = negatives.clone();
        extended.extend_from_slice(&{
            let mut n = vec![0.0; 8];
            n[6] = 1.0;
            n
        });
        let without = ContrastiveBatch {
            dim: 8,
            queries: &q,
            keys: &k,
            negatives: &negatives,
            query_labels: &[0],
            negative_labels: &[1, 2, 3, 1],
            temperature: 0.07,
        };
        let with = ContrastiveBatch {
            dim: 8,
            queries: &q,
            keys: &k,
            negatives: &extended,
            query_labels: &[0],
            negative_labels: &[1, 2, 3, 1, 0],
            temperature: 0.07,
        };
        let a: f64 = contrastive_loss(&without).unwrap();
        let b: f64 = contrastive_loss(&with).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn contrastive_no_negatives_is_zero() {
        let (q, k, _) = orthonormal_batch();
        let batch = ContrastiveBatch {
            dim: 8,
            queries: &q,
            keys: &k,
            negatives: &[],
            query_labels: &[0],
            negative_labels: &[],
            temperature: 0.07,
        };
        let loss: f64 = contrastive_loss(&batch).unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn contrastive_decreases_as_alignment_grows() {
        let dim = 4;
        let mut negatives = vec![0.0; dim * 2];
        negatives[1] = 1.0;
        negatives[dim + 2] = 1.0;
        let mut prev = f64::INFINITY;
        for step in 0..10 {
            // rotate the key toward the query
            let angle = 1.2 - step as f64 * 0.12;
            let q = [1.0, 0.0, 0.0, 0.0];
            let k = [angle.cos(), angle.sin(), 0.0, 0.0];
            let batch = ContrastiveBatch {
                dim,
                queries: &q,
                keys: &k,
                negatives: &negatives,
                query_labels: &[0],
                negative_labels: &[1, 2],
                temperature: 0.1,
            };
            let loss: f64 = contrastive_loss(&batch).unwrap();
            assert!(loss < prev, "step {step}: {loss} vs {prev}");
            prev = loss;
        }
    }

    #[test]
    fn contrastive_rejects_non_unit_vectors() {
        let q = [0.5, 0.0, 0.0, 0.0];
        let k = [1.0, 0.0, 0.0, 0.0];
        let batch = ContrastiveBatch {
            dim: 4,
            queries: &q,
            keys: &k,
            negatives: &[],
            query_labels: &[0],
            negative_labels: &[],
            temperature: 0.07,
        };
        assert!(matches!(
            contrastive_loss(&batch),
            Err(LossError::NotUnitNorm { .. })
        ));
    }

    #[test]
    fn total_loss_sum() {
        let t = total_loss(1.0, 2.0, 3.0);
        assert_eq!(t.l_total, 6.0);
        let z = total_loss(0.0, 0.0, 0.0);
        assert_eq!(z.l_total, 0.0);

        let mut rng = Rng::new(7);
        for _ in 0..100 {
            let (a, b, c) = (rng.next_f64(), rng.next_f64(), rng.next_f64());
            let t = total_loss(a, b, c);
            assert_eq!(t.l_total, a + b + c);
        }
    }

    #[test]
    fn key_queue_fifo_with_labels() {
        let mut q: KeyQueue<f64> = KeyQueue::new(3, 2);
        for i in 0..5usize {
            let key = if i % 2 == 0 { [1.0, 0.0] } else { [0.0, 1.0] };
            q.enqueue(&key, &[i]).unwrap();
        }
        assert_eq!(q.len(), 3);
        let (_, labels) = q.negatives();
        // items 2, 3, 4 survive at slots 2 % 3, 0, 1
        assert_eq!(labels, &[3, 4, 2]);
        assert!(q.enqueue(&[3.0, 0.0], &[0]).is_err());
    }
}
