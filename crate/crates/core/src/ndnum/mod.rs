//! Deterministic numeric core: dense tensors, seeded random streams, fully
//! connected layers with hand-written reverse-mode gradients, plain SGD and a
//! central-difference gradient checker.

mod dense;
mod gradcheck;
mod rng;
mod sgd;
mod tensor;

pub use dense::{Activation, DenseGrads, DenseLayer, Mlp, Trace};
pub use gradcheck::{finite_diff_check, relative_error};
pub use rng::{streams, Rng};
pub use sgd::{sgd_step, Direction};
pub use tensor::Tensor;

/// Lower clamp applied to probabilities before any logarithm.
pub const PROB_EPS: f64 = 1e-7;

/// Clamp a probability into `[PROB_EPS, 1 - PROB_EPS]`.
pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}
