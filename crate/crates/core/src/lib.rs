//! Source-free domain adaptation with Shuffle PatchMix augmentation and
//! confidence-margin weighted pseudo-labels, scaled down to run on a CPU.
//!
//! The crate is organized around the adaptation pipeline:
//!
//! * [`augment`] — weak/strong augmentation and the Shuffle PatchMix (SPM)
//!   transform with adaptive Beta mixing and overlap blending.
//! * [`pseudolabel`] — FIFO feature bank, k-NN soft-voting pseudo-label
//!   refinement, confidence-margin weights, momentum model updates.
//! * [`losses`] — weighted cross-entropy, diversity regularizer, and the
//!   queue-based contrastive loss with same-class negative exclusion.
//! * [`model`] — a small conv encoder + classifier + projection head with
//!   exact analytic gradients.
//! * [`reweight`] — warmup schedule controlling how strongly the
//!   confidence-margin weights act over training.
//! * [`data`] — the procedural shape benchmark with controllable domain
//!   styling (the source/target pair every experiment runs on).
//! * [`trainer`] — source training, the adaptation loop, evaluation, and the
//!   component ablation grid.
//!
//! Everything is deterministic given a seed: random streams are derived per
//! (image index, epoch, purpose), so results do not depend on batch layout or
//! worker count.

#![cfg_attr(not(feature = "std"), no_std)]

#[cfg(not(any(feature = "std", feature = "libm")))]
compile_error!("spm-core needs either the `std` or the `libm` feature");

extern crate alloc;

pub mod augment;
pub mod data;
pub mod image;
pub mod kernels;
pub mod losses;
pub mod model;
pub mod pseudolabel;
pub mod real;
pub mod reweight;
pub mod rng;
pub mod trainer;

pub use image::{Image, CANONICAL_SIDE};
pub use real::Real;
pub use rng::Rng;
