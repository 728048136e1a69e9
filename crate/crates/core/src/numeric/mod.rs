//! Deterministic dense-math kernel: parameters, pure ops, a fixed-op gradient
//! tape, SGD, and finite-difference gradient checking.
//!
//! Everything is `f64`. The op set is exactly what the model needs: affine,
//! matrix-vector product, ReLU, residual add, softmax cross-entropy,
//! log-probability of a class, and weighted sums of scalars.

mod gradcheck;
mod ops;
mod param;
mod rng;
mod tape;

pub use gradcheck::{finite_diff_check, GradientHost};
pub use ops::{affine_apply, cross_entropy, entropy, matvec_apply, relu, softmax, PROB_FLOOR};
pub use param::{ParamId, ParamStore, Parameter};
pub use rng::{fnv1a64, Rng};
pub use tape::{NodeId, Tape};
