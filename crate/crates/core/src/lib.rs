//! Desk-scale simulator for two-stage noise-robust federated learning.
//!
//! The pipeline mirrors a realistic noisy-label federation:
//!
//! 1. [`data`] builds a class-imbalanced synthetic dataset, splits it across
//!    clients with a Bernoulli/Dirichlet scheme and injects heterogeneous,
//!    instance-dependent label noise using per-client annotator networks.
//! 2. [`federation`] runs a FedAvg warm-up with logit adjustment, hands the
//!    warm-up model to [`detection`] (per-class loss indicators, min-max
//!    normalisation, two-component GMM) and then trains clean clients with
//!    cross-entropy and noisy clients with knowledge distillation, merging
//!    updates with distance-aware aggregation.
//! 3. [`eval`] scores models with balanced accuracy and drives the baseline
//!    and ablation runs.
//!
//! Everything numeric lives in [`nn`]: a small classifier with hand-written
//! gradients, the loss family and Adam.
//!
//! Client-level work is data-parallel through [`par`]. With the default
//! `parallel` feature it runs on rayon; without it the same code runs
//! sequentially. Every random stream is derived from the experiment seed and
//! a stable tag, so results do not depend on scheduling or thread count.

pub mod config;
pub mod data;
pub mod detection;
pub mod error;
pub mod eval;
pub mod federation;
pub mod nn;
pub mod par;

pub use error::{Error, Result};
