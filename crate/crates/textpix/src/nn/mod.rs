//! Deterministic reverse-mode kernels, SGD, and gradient checking.

pub mod gradcheck;
pub mod layers;
pub mod sgd;
pub mod spec;

pub use gradcheck::{grad_check, GradCheckReport};
pub use sgd::{sgd_step, OptimizerState};
pub use spec::LayerSpec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::Tensor;

/// Glorot-uniform initialization: draws from
/// `[-sqrt(6/(fan_in+fan_out)), +sqrt(6/(fan_in+fan_out)))`.
pub fn glorot_uniform(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = -limit + 2.0 * limit * rng.random::<f64>();
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn glorot_respects_limit_and_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let t = glorot_uniform(&[10, 10], 10, 10, &mut rng);
        let limit = (6.0 / 20.0f64).sqrt();
        assert!(t.data().iter().all(|v| v.abs() <= limit));

        let mut rng2 = ChaCha8Rng::seed_from_u64(7);
        let t2 = glorot_uniform(&[10, 10], 10, 10, &mut rng2);
        assert_eq!(t.data(), t2.data());
    }
}
