//! Desk-scale laboratory for preference-conditioned decision models trained
//! on paired value-conflict data.
//!
//! The pieces, bottom up:
//!
//! - [`prefspace`]: preference descriptors, antipodal pair embeddings, the
//!   linear user manifold `p(z) = B·U·z`, greedy ε-nets, empirical Lipschitz
//!   estimates, and the anchored uniform risk bound with its Hoeffding
//!   machinery.
//! - [`condmodel`]: the bilinear softmax scorer `π(y | x, p)` over a
//!   scenario's options, with closed-form loss, gradient, and Hessian.
//! - [`trainer`]: the weighted paired objective, synchronous and asynchronous
//!   update rules, single-side baselines, and the second-order gap check
//!   between the two update orders.
//! - [`datagen`]: deterministic synthetic value-conflict scenarios with exact
//!   ground truth, plus JSONL serialization.
//! - [`evalkit`]: pick-the-best and select-all-that-apply protocols with
//!   per-side reports.
//! - [`customize`]: few-shot inference of a user's intrinsic preference
//!   coordinate from observed choices.
//! - [`harness`]: experiment runners, trend checks, and digest manifests.

pub mod condmodel;
pub mod customize;
pub mod datagen;
pub mod error;
pub mod evalkit;
pub mod harness;
pub mod jsonfmt;
pub mod prefspace;
pub mod trainer;
mod vecmath;

pub use error::{Error, Result};
