//! Source training, the self-training adaptation loop, evaluation, and the
//! component ablation grid.
//!
//! One adaptation step, in order: weakly augment the batch and push the
//! momentum model's features and probabilities into the vote bank; refine
//! every sample's pseudo-label by k-NN soft voting; turn confidence-margin
//! weights into effective weights under the warmup policy; build two strong
//! (SPM) views, classify one with the trainable model and key the other
//! with the momentum model; take the weighted CE + diversity + contrastive
//! gradient step; nudge the momentum model; enqueue the new keys.
//!
//! Every random choice draws from a stream derived from
//! `(seed, purpose, epoch, image index)`, so runs are bit-reproducible and
//! independent of batch composition or worker count.

use crate::augment::{self, AugmentError, SpmParams};
use crate::data::{DataError, DomainSpec, LabeledDataset};
use crate::image::Image;
use crate::losses::{
    contrastive_loss, contrastive_query_grad, diversity_logit_grad, diversity_loss,
    smoothed_ce, smoothed_ce_logit_grad, total_loss, weighted_ce, weighted_ce_logit_grad,
    ContrastiveBatch, KeyQueue, LossBreakdown, LossError,
};
use crate::model::{
    backward, forward, forward_cached, forward_cached_reusing, sgd_step, BatchCache, ModelConfig,
    ModelError, ParamSet,
};
use crate::pseudolabel::{momentum_update, refine, BankError, FeatureBank, PseudoLabel};
use crate::reweight::{effective_weights, ReweightError, WarmupPolicy};
use crate::rng::Rng;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

// Purpose tags for derived random streams. Public and fixed: given (seed,
// tag, epoch, index) anyone can reproduce the exact stream a run consumed,
// which is what makes independent reimplementations bit-comparable.
pub const STREAM_INIT: u64 = 0xA001;
pub const STREAM_ORDER: u64 = 0xA002;
pub const STREAM_WEAK: u64 = 0xA003;
pub const STREAM_STRONG_A: u64 = 0xA004;
pub const STREAM_STRONG_B: u64 = 0xA005;
pub const STREAM_NU: u64 = 0xA006;
pub const STREAM_SRC_ORDER: u64 = 0xA007;
pub const STREAM_SRC_WEAK: u64 = 0xA008;

#[derive(Debug)]
pub enum TrainError {
    Model(ModelError),
    Augment(AugmentError),
    Bank(BankError),
    Loss(LossError),
    Reweight(ReweightError),
    Data(DataError),
    /// Training hit a non-finite loss; carries the last finite step index.
    Diverged { step: usize },
    BadConfig(String),
}

impl fmt::Display for TrainError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrainError::Model(e) => write!(f, "model: {e}"),
            TrainError::Augment(e) => write!(f, "augment: {e}"),
            TrainError::Bank(e) => write!(f, "feature bank: {e}"),
            TrainError::Loss(e) => write!(f, "loss: {e}"),
            TrainError::Reweight(e) => write!(f, "reweight: {e}"),
            TrainError::Data(e) => write!(f, "data: {e}"),
            TrainError::Diverged { step } => {
                write!(f, "training diverged (non-finite loss) after step {step}")
            }
            TrainError::BadConfig(what) => write!(f, "bad config: {what}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for TrainError {}

macro_rules! from_err {
    ($variant:ident, $ty:ty) => {
        impl From<$ty> for TrainError {
            fn from(e: $ty) -> Self {
                TrainError::$variant(e)
            }
        }
    };
}
from_err!(Model, ModelError);
from_err!(Augment, AugmentError);
from_err!(Bank, BankError);
from_err!(Loss, LossError);
from_err!(Reweight, ReweightError);
from_err!(Data, DataError);

/// Supervised pre-training configuration for the source model.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct SourceConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Heavy-ball momentum on the source optimizer (0 = plain SGD).
    pub sgd_momentum: f64,
    /// Cosine-decay the learning rate to zero over the run.
    pub cosine_decay: bool,
    /// Label smoothing on the source targets; keeps the source model's
    /// logits bounded so adaptation gradients do not vanish.
    pub label_smoothing: f64,
}

impl Default for SourceConfig {
    fn default() -> Self {
        SourceConfig {
            epochs: 30,
            batch_size: 16,
            lr: 0.05,
            sgd_momentum: 0.9,
            cosine_decay: false,
            label_smoothing: 0.1,
        }
    }
}

/// Adaptation hyperparameters.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct AdaptConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub k_neighbors: usize,
    pub bank_capacity: usize,
    pub temperature: f64,
    pub momentum: f64,
    /// Confidence-margin reweighting on/off; off pins the warmup blend at
    /// zero, i.e. every sample weighs 1.
    pub reweight: bool,
    /// Augmentation worker threads (1 = inline); results are merged by
    /// image index, so the count never changes the output.
    pub workers: usize,
    pub seed: u64,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        AdaptConfig {
            epochs: 100,
            batch_size: 64,
            lr: 2e-4,
            k_neighbors: 3,
            bank_capacity: 256,
            temperature: 0.15,
            momentum: 0.999,
            reweight: true,
            workers: 1,
            seed: 0,
        }
    }
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 || self.k_neighbors == 0 || self.bank_capacity == 0 {
            return Err(TrainError::BadConfig("counts must be positive".into()));
        }
        if !(self.lr > 0.0) {
            return Err(TrainError::BadConfig(format!("lr {} must be positive", self.lr)));
        }
        if self.temperature <= 0.0 {
            return Err(TrainError::BadConfig("temperature must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.momentum) {
            return Err(TrainError::BadConfig("momentum must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// One metrics row per optimization step; `target_accuracy` is filled on
/// the last step of each epoch when an evaluation set is supplied.
#[derive(Clone, Debug, PartialEq)]
pub struct StepMetrics {
    pub step: usize,
    pub epoch: usize,
    pub l_ce: f64,
    pub l_div: f64,
    pub l_ctr: f64,
    pub l_total: f64,
    pub mean_weight: f64,
    pub spm_a: f64,
    pub gamma: f64,
    pub pl_accuracy: f64,
    pub target_accuracy: Option<f64>,
}

/// Accuracy per class plus the macro average, as fractions in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub per_class: Vec<f64>,
    pub mean: f64,
}

/// Top-1 accuracy per class and their macro average; no augmentation.
pub fn evaluate(params: &ParamSet<f32>, dataset: &LabeledDataset) -> Result<EvalReport, TrainError> {
    let classes = params.config().classes;
    let mut correct = vec![0usize; classes];
    let mut total = vec![0usize; classes];
    for (chunk_imgs, chunk_labels) in dataset
        .images
        .chunks(64)
        .zip(dataset.labels.chunks(64))
    {
        let outs = forward(params, chunk_imgs)?;
        for (o, &label) in outs.iter().zip(chunk_labels) {
            let pred = argmax_f32(&o.probs);
            total[label] += 1;
            if pred == label {
                correct[label] += 1;
            }
        }
    }
    let per_class: Vec<f64> = correct
        .iter()
        .zip(&total)
        .map(|(&c, &t)| if t == 0 { 0.0 } else { c as f64 / t as f64 })
        .collect();
    let mean = per_class.iter().sum::<f64>() / classes as f64;
    Ok(EvalReport { per_class, mean })
}

#[inline]
fn libm_cos(x: f64) -> f64 {
    #[cfg(feature = "std")]
    {
        x.cos()
    }
    #[cfg(not(feature = "std"))]
    {
        libm::cos(x)
    }
}

fn check_labels(dataset: &LabeledDataset, classes: usize) -> Result<(), TrainError> {
    match dataset.labels.iter().max() {
        Some(&m) if m >= classes => Err(TrainError::BadConfig(format!(
            "dataset label {m} outside the model's {classes} classes"
        ))),
        _ => Ok(()),
    }
}

fn argmax_f32(xs: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate().skip(1) {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

/// Per-epoch record from source training.
#[derive(Clone, Debug, PartialEq)]
pub struct SourceEpoch {
    pub epoch: usize,
    pub mean_ce: f64,
    pub holdout_accuracy: Option<f64>,
}

/// Standard cross-entropy training on labeled source data under weak
/// augmentation. Returns the trained parameters and per-epoch records.
pub fn train_source(
    dataset: &LabeledDataset,
    holdout: Option<&LabeledDataset>,
    cfg: &SourceConfig,
    model_cfg: &ModelConfig,
    seed: u64,
) -> Result<(ParamSet<f32>, Vec<SourceEpoch>), TrainError> {
    if cfg.batch_size == 0 {
        return Err(TrainError::BadConfig("batch_size must be positive".into()));
    }
    check_labels(dataset, model_cfg.classes)?;
    let mut params: ParamSet<f32> =
        ParamSet::init(model_cfg, Rng::derive(seed, &[STREAM_INIT]).next_u64())?;
    let mut velocity = params.zeros_like();
    let n = dataset.len();
    let classes = model_cfg.classes;
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut step = 0usize;

    for epoch in 0..cfg.epochs {
        let lr = if cfg.cosine_decay {
            let t = epoch as f64 / cfg.epochs as f64;
            cfg.lr * 0.5 * (1.0 + libm_cos(core::f64::consts::PI * t))
        } else {
            cfg.lr
        };
        let order = Rng::derive(seed, &[STREAM_SRC_ORDER, epoch as u64]).permutation(n);
        let mut ce_sum = 0.0;
        let mut batches = 0usize;
        for batch_idx in order.chunks(cfg.batch_size) {
            let images: Vec<Image> = batch_idx
                .iter()
                .map(|&i| {
                    let mut rng = Rng::derive(seed, &[STREAM_SRC_WEAK, epoch as u64, i as u64]);
                    augment::weak_augment(&dataset.images[i], &mut rng)
                })
                .collect();
            let labels: Vec<usize> = batch_idx.iter().map(|&i| dataset.labels[i]).collect();

            let (outs, cache) = forward_cached(&params, &images)?;
            let probs: Vec<f32> = outs.iter().flat_map(|o| o.probs.iter().copied()).collect();
            let ce: f32 = smoothed_ce(&probs, classes, &labels, cfg.label_smoothing)?;
            if !ce.is_finite() {
                return Err(TrainError::Diverged { step });
            }
            ce_sum += ce as f64;
            batches += 1;

            let d_logits = smoothed_ce_logit_grad(&probs, classes, &labels, cfg.label_smoothing);
            let d_proj = vec![0.0f32; images.len() * model_cfg.proj_dim];
            let grads = backward(&params, &cache, &d_logits, &d_proj)?;
            let mu = cfg.sgd_momentum as f32;
            for (v, g) in velocity.tensors_mut().iter_mut().zip(grads.tensors()) {
                for (vv, &gv) in v.data.iter_mut().zip(&g.data) {
                    *vv = mu * *vv + gv;
                }
            }
            sgd_step(&mut params, &velocity, lr)?;
            step += 1;
        }
        let holdout_accuracy = match holdout {
            Some(h) => Some(evaluate(&params, h)?.mean),
            None => None,
        };
        log.push(SourceEpoch {
            epoch,
            mean_ce: ce_sum / batches.max(1) as f64,
            holdout_accuracy,
        });
    }
    Ok((params, log))
}

/// Result of an adaptation run.
pub struct AdaptOutcome {
    pub params: ParamSet<f32>,
    pub momentum_params: ParamSet<f32>,
    pub metrics: Vec<StepMetrics>,
    /// Final state of the soft-voting memory (snapshot-serializable).
    pub vote_bank: FeatureBank,
}

struct AugmentedBatch {
    weak: Vec<Image>,
    strong_a: Vec<Image>,
    strong_b: Vec<Image>,
}

// Augment one batch. Streams derive from (seed, purpose, epoch, image
// index), so the result is identical however the work is split.
fn augment_batch(
    dataset: &LabeledDataset,
    batch_idx: &[usize],
    spm: &SpmParams,
    epoch: usize,
    epoch_frac: f64,
    nu_batch: Option<u32>,
    seed: u64,
    workers: usize,
) -> Result<AugmentedBatch, AugmentError> {
    let one = |&i: &usize| -> Result<(Image, Image, Image), AugmentError> {
        let img = &dataset.images[i];
        let mut weak_rng = Rng::derive(seed, &[STREAM_WEAK, epoch as u64, i as u64]);
        let weak = augment::weak_augment(img, &mut weak_rng);
        let mut a_rng = Rng::derive(seed, &[STREAM_STRONG_A, epoch as u64, i as u64]);
        let (strong_a, _) = augment::strong_augment_traced(img, spm, epoch_frac, nu_batch, &mut a_rng)?;
        let mut b_rng = Rng::derive(seed, &[STREAM_STRONG_B, epoch as u64, i as u64]);
        let (strong_b, _) = augment::strong_augment_traced(img, spm, epoch_frac, nu_batch, &mut b_rng)?;
        Ok((weak, strong_a, strong_b))
    };

    let triples: Vec<(Image, Image, Image)> = run_indexed(batch_idx, workers, one)?;
    let mut out = AugmentedBatch {
        weak: Vec::with_capacity(batch_idx.len()),
        strong_a: Vec::with_capacity(batch_idx.len()),
        strong_b: Vec::with_capacity(batch_idx.len()),
    };
    for (w, a, b) in triples {
        out.weak.push(w);
        out.strong_a.push(a);
        out.strong_b.push(b);
    }
    Ok(out)
}

#[cfg(feature = "std")]
fn run_indexed<T: Send, E: Send>(
    idx: &[usize],
    workers: usize,
    f: impl Fn(&usize) -> Result<T, E> + Sync,
) -> Result<Vec<T>, E> {
    if workers <= 1 || idx.len() < 2 {
        return idx.iter().map(&f).collect();
    }
    let chunk = idx.len().div_ceil(workers);
    let mut results: Vec<Option<Result<Vec<T>, E>>> = Vec::new();
    results.resize_with(idx.len().div_ceil(chunk), || None);
    std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for part in idx.chunks(chunk) {
            let f = &f;
            handles.push(scope.spawn(move || part.iter().map(f).collect::<Result<Vec<T>, E>>()));
        }
        for (slot, h) in results.iter_mut().zip(handles) {
            *slot = Some(h.join().expect("augmentation worker panicked"));
        }
    });
    let mut out = Vec::with_capacity(idx.len());
    for slot in results {
        out.extend(slot.expect("worker result")?);
    }
    Ok(out)
}

#[cfg(not(feature = "std"))]
fn run_indexed<T, E>(
    idx: &[usize],
    _workers: usize,
    f: impl Fn(&usize) -> Result<T, E>,
) -> Result<Vec<T>, E> {
    idx.iter().map(&f).collect()
}

// unit-normalize in f64; degenerate vectors fall back to a fixed basis
// direction so the bank precondition cannot trip on a dead encoder
fn normalized_f64(v: &[f32]) -> Vec<f64> {
    let mut out: Vec<f64> = v.iter().map(|&x| x as f64).collect();
    let norm = crate::real::sqrt64(out.iter().map(|x| x * x).sum::<f64>());
    if norm > 1e-9 {
        out.iter_mut().for_each(|x| *x /= norm);
    } else {
        out.iter_mut().for_each(|x| *x = 0.0);
        out[0] = 1.0;
    }
    out
}

/// Source-free adaptation on unlabeled target images.
///
/// `target.labels` feed only the per-step pseudo-label accuracy metric and
/// the optional per-epoch evaluation on `eval_set`; the optimization sees
/// pseudo-labels alone. With `epochs = 0` the returned parameters are
/// bit-identical to the source model.
pub fn adapt(
    theta_s: &ParamSet<f32>,
    target: &LabeledDataset,
    eval_set: Option<&LabeledDataset>,
    spm: &SpmParams,
    warmup: &WarmupPolicy,
    cfg: &AdaptConfig,
) -> Result<AdaptOutcome, TrainError> {
    cfg.validate()?;
    spm.validate()?;
    warmup.validate()?;
    let model_cfg = theta_s.config().clone();
    check_labels(target, model_cfg.classes)?;
    let classes = model_cfg.classes;
    let proj_dim = model_cfg.proj_dim;
    let feat_dim = model_cfg.feature_dim();
    let seed = cfg.seed;

    let mut theta = theta_s.clone();
    let mut theta_m = theta_s.clone();
    // both queues start empty and warm-fill over the first batches
    let mut vote_bank = FeatureBank::new(cfg.bank_capacity, feat_dim, classes);
    let mut key_queue: KeyQueue<f32> = KeyQueue::new(cfg.bank_capacity, proj_dim);

    let n = target.len();
    let mut metrics = Vec::new();
    let mut step = 0usize;
    let mut cache_slot: Option<BatchCache<f32>> = None;

    for epoch in 0..cfg.epochs {
        let progress = epoch as f64 / cfg.epochs as f64;
        let spm_a = spm.a_at(progress);
        let gamma = if cfg.reweight { warmup.gamma(progress) } else { 0.0 };
        let order = Rng::derive(seed, &[STREAM_ORDER, epoch as u64]).permutation(n);
        let steps_in_epoch = order.chunks(cfg.batch_size).count();

        for (batch_no, batch_idx) in order.chunks(cfg.batch_size).enumerate() {
            let b = batch_idx.len();

            // per-batch patch count unless configured per image
            let nu_batch = if spm.nu_per_image {
                None
            } else {
                let mut nu_rng = Rng::derive(seed, &[STREAM_NU, epoch as u64, batch_no as u64]);
                Some(spm.nu_options[nu_rng.below(spm.nu_options.len())])
            };

            let batch = augment_batch(
                target,
                batch_idx,
                spm,
                epoch,
                progress,
                nu_batch,
                seed,
                cfg.workers,
            )?;

            // (1) momentum features/probabilities of the weak view feed the
            // vote bank
            let weak_outs = forward(&theta_m, &batch.weak)?;
            let mut feats = Vec::with_capacity(b * feat_dim);
            let mut probs64 = Vec::with_capacity(b * classes);
            for o in &weak_outs {
                feats.extend(normalized_f64(&o.features));
                probs64.extend(o.probs.iter().map(|&p| p as f64));
            }
            vote_bank.enqueue(&feats, &probs64)?;

            // (2) k-NN soft-voting pseudo-labels
            let mut pls: Vec<PseudoLabel> = Vec::with_capacity(b);
            for i in 0..b {
                let q = &feats[i * feat_dim..(i + 1) * feat_dim];
                let sp = &probs64[i * classes..(i + 1) * classes];
                pls.push(refine(&vote_bank, q, sp, cfg.k_neighbors)?);
            }
            let pl_labels: Vec<usize> = pls.iter().map(|p| p.label).collect();
            let pl_accuracy = batch_idx
                .iter()
                .zip(&pl_labels)
                .filter(|(&i, &l)| target.labels[i] == l)
                .count() as f64
                / b as f64;

            // (3) effective weights under warmup
            let raw: Vec<f64> = pls.iter().map(|p| p.weight).collect();
            let eff = if cfg.reweight {
                effective_weights(&raw, progress, warmup)?
            } else {
                vec![1.0; b]
            };
            let mean_weight = eff.iter().sum::<f64>() / b as f64;
            let weights_f32: Vec<f32> = eff.iter().map(|&w| w as f32).collect();

            // (4) strong views: classify A with the trainable model, key B
            // with the momentum model
            let (strong_outs, cache) = forward_cached_reusing(&theta, &batch.strong_a, cache_slot.take())?;
            let probs_a: Vec<f32> = strong_outs.iter().flat_map(|o| o.probs.iter().copied()).collect();
            let queries: Vec<f32> =
                strong_outs.iter().flat_map(|o| o.projection.iter().copied()).collect();
            let key_outs = forward(&theta_m, &batch.strong_b)?;
            let keys: Vec<f32> = key_outs.iter().flat_map(|o| o.projection.iter().copied()).collect();

            // (5) the three losses on this step's snapshot of the key queue
            let (negatives, negative_labels) = key_queue.negatives();
            let ctr_batch = ContrastiveBatch {
                dim: proj_dim,
                queries: &queries,
                keys: &keys,
                negatives,
                query_labels: &pl_labels,
                negative_labels,
                temperature: cfg.temperature,
            };
            let l_ce = weighted_ce(&probs_a, classes, &pl_labels, &weights_f32)? as f64;
            let l_div = diversity_loss(&probs_a, classes) as f64;
            let l_ctr = contrastive_loss(&ctr_batch)? as f64;
            let breakdown: LossBreakdown = total_loss(l_ce, l_ctr, l_div);
            if !breakdown.l_total.is_finite() {
                return Err(TrainError::Diverged { step });
            }

            // (6) gradient step on the trainable model
            let mut d_logits = weighted_ce_logit_grad(&probs_a, classes, &pl_labels, &weights_f32);
            for (d, g) in d_logits.iter_mut().zip(diversity_logit_grad(&probs_a, classes)) {
                *d += g;
            }
            let d_proj = contrastive_query_grad(&ctr_batch)?;
            let grads = backward(&theta, &cache, &d_logits, &d_proj)?;
            cache_slot = Some(cache);
            sgd_step(&mut theta, &grads, cfg.lr)?;

            // (7) momentum model follows, then the new keys join the queue
            momentum_update(&mut theta_m, &theta, cfg.momentum)?;
            key_queue.enqueue(&keys, &pl_labels)?;

            let target_accuracy = if batch_no + 1 == steps_in_epoch {
                match eval_set {
                    Some(ev) => Some(evaluate(&theta, ev)?.mean),
                    None => None,
                }
            } else {
                None
            };
            metrics.push(StepMetrics {
                step,
                epoch,
                l_ce: breakdown.l_ce,
                l_div: breakdown.l_div,
                l_ctr: breakdown.l_ctr,
                l_total: breakdown.l_total,
                mean_weight,
                spm_a,
                gamma,
                pl_accuracy,
                target_accuracy,
            });
            step += 1;
        }
    }

    Ok(AdaptOutcome { params: theta, momentum_params: theta_m, metrics, vote_bank })
}

/// One row of the component ablation grid.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub name: &'static str,
    pub spm_on: bool,
    pub overlap_on: bool,
    pub reweight_on: bool,
    pub seed_accuracies: Vec<f64>,
    pub mean_accuracy: f64,
}

/// The four toggles trained in the grid: everything off, reweighting only,
/// SPM only, SPM with overlap blending, and the full method.
pub fn ablation_grid() -> [(&'static str, bool, bool, bool); 5] {
    [
        ("baseline", false, false, false),
        ("+reweight", false, false, true),
        ("+spm", true, false, false),
        ("+spm+overlap", true, true, false),
        ("full", true, true, true),
    ]
}

/// End-to-end experiment description shared by the adaptation experiment
/// and the ablation grid.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct ExperimentConfig {
    pub source_domain: DomainSpec,
    pub target_domain: DomainSpec,
    pub n_train: usize,
    pub n_eval: usize,
    pub classes: usize,
    pub seeds: Vec<u64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            source_domain: DomainSpec::photo_like(),
            target_domain: DomainSpec::sketch_like(),
            n_train: 2000,
            n_eval: 800,
            classes: 4,
            seeds: vec![1, 2, 3, 4, 5],
        }
    }
}

const SEED_SRC_TRAIN: u64 = 11;
const SEED_SRC_EVAL: u64 = 12;
const SEED_TGT_TRAIN: u64 = 13;
const SEED_TGT_EVAL: u64 = 14;

/// Datasets for one experiment seed: source train/holdout and target
/// train/holdout, all derived deterministically.
pub fn experiment_datasets(
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<[LabeledDataset; 4], TrainError> {
    Ok([
        crate::data::gen_dataset(&cfg.source_domain, cfg.n_train, cfg.classes, seed ^ (SEED_SRC_TRAIN << 32))?,
        crate::data::gen_dataset(&cfg.source_domain, cfg.n_eval, cfg.classes, seed ^ (SEED_SRC_EVAL << 32))?,
        crate::data::gen_dataset(&cfg.target_domain, cfg.n_train, cfg.classes, seed ^ (SEED_TGT_TRAIN << 32))?,
        crate::data::gen_dataset(&cfg.target_domain, cfg.n_eval, cfg.classes, seed ^ (SEED_TGT_EVAL << 32))?,
    ])
}

/// Run the five-row ablation grid over shared seeds: per seed, one source
/// model is trained and each row adapts it with its own component toggles,
/// so row differences are attributable to the toggles alone.
pub fn ablate(
    exp: &ExperimentConfig,
    source_cfg: &SourceConfig,
    base_spm: &SpmParams,
    warmup: &WarmupPolicy,
    base_cfg: &AdaptConfig,
    model_cfg: &ModelConfig,
) -> Result<Vec<AblationRow>, TrainError> {
    let grid = ablation_grid();
    let mut acc: Vec<Vec<f64>> = vec![Vec::new(); grid.len()];

    for &seed in &exp.seeds {
        let [src_train, src_eval, tgt_train, tgt_eval] = experiment_datasets(exp, seed)?;
        let _ = src_eval;
        let (theta_s, _) = train_source(&src_train, None, source_cfg, model_cfg, seed)?;

        for (row, &(_, spm_on, overlap_on, reweight_on)) in grid.iter().enumerate() {
            let mut spm = base_spm.clone();
            if !spm_on {
                spm.rho = 0.0;
            }
            spm.blend = overlap_on;
            let cfg = AdaptConfig { reweight: reweight_on, seed, ..base_cfg.clone() };
            let outcome = adapt(&theta_s, &tgt_train, None, &spm, warmup, &cfg)?;
            acc[row].push(evaluate(&outcome.params, &tgt_eval)?.mean);
        }
    }

    Ok(grid
        .iter()
        .zip(acc)
        .map(|(&(name, spm_on, overlap_on, reweight_on), seed_accuracies)| {
            let mean_accuracy = seed_accuracies.iter().sum::<f64>() / seed_accuracies.len() as f64;
            AblationRow { name, spm_on, overlap_on, reweight_on, seed_accuracies, mean_accuracy }
        })
        .collect())
}
