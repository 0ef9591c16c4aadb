//! Source-free unsupervised domain adaptation for semantic segmentation.
//!
//! The workflow has three phases:
//!
//! 1. Train a small segmentation network on a labeled source modality
//!    ([`pipeline::train_source`]).
//! 2. Summarize the source domain as a class-conditional Gaussian mixture in
//!    the network's per-pixel embedding space ([`pipeline::estimate_internal`]).
//!    After this point the source images are no longer needed.
//! 3. Adapt to an unlabeled target modality by pulling target embeddings
//!    toward samples of the mixture with the sliced Wasserstein distance,
//!    while fine-tuning the classifier on those samples ([`pipeline::adapt`]).
//!
//! Supporting modules generate synthetic two-modality benchmarks
//! ([`datagen`]), score segmentations ([`metrics`]) and compute the
//! alignment distance ([`swd`]).

pub mod datagen;
pub mod error;
pub mod gmm;
pub mod metrics;
pub mod network;
pub mod pipeline;
pub mod rng;
pub mod swd;

pub use error::{Result, SfsError};
