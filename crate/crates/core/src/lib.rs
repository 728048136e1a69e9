//! Early-exit classification lab.
//!
//! A layered feed-forward backbone carries an internal classifier and a small
//! exit-policy head at every layer. The policy decides, per instance, whether
//! to stop at the current layer or continue, trading accuracy against depth.
//! Training alternates between a policy-gradient stage for the exit heads and
//! a task stage for the backbone and classifiers, guided by a per-instance
//! hardness measure (the memorized layer).
//!
//! Modules:
//! - [`numeric`]: dense kernels, a fixed-op gradient tape, SGD, gradient checking
//! - [`model`]: the backbone bundle with classifier and policy heads
//! - [`data`]: synthetic dataset generation, file I/O, splits, standardization
//! - [`hardness`]: memorized layer, forgetting events, Spearman correlation
//! - [`rl`]: actions, trajectories, rewards, REINFORCE updates, enumeration oracle
//! - [`training`]: the staged training procedure
//! - [`inference`]: early-exit inference, metrics, baselines, alpha sweeps

// Index loops are the clearest form for the dense kernels, and `!(x > 0.0)`
// validation rejects NaN where `x <= 0.0` would accept it.
#![allow(clippy::needless_range_loop)]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod hardness;
pub mod inference;
pub mod model;
pub mod numeric;
pub mod rl;
pub mod training;

pub use error::{Error, Result};
