use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::tensor::Scalar;

/// Random source used everywhere a seed is accepted.
pub type SeededRng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Weight initialization: `N(mean, std²)` weights, constant bias.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitSpec {
    pub mean: f64,
    pub std: f64,
    pub bias: f64,
}

impl Default for InitSpec {
    fn default() -> Self {
        InitSpec {
            mean: 0.0,
            std: 0.02,
            bias: 0.0,
        }
    }
}

impl InitSpec {
    pub fn sample<T: Scalar>(&self, n: usize, rng: &mut SeededRng) -> Vec<T> {
        assert!(self.std > 0.0, "init std must be positive");
        let dist = Normal::new(self.mean, self.std).expect("finite std");
        (0..n).map(|_| T::of(dist.sample(rng))).collect()
    }
}

/// `n` standard normal draws, sampled in f64 so f32 and f64 models agree.
pub fn normal_vec<T: Scalar>(n: usize, rng: &mut SeededRng) -> Vec<T> {
    (0..n)
        .map(|_| {
            let v: f64 = StandardNormal.sample(rng);
            T::of(v)
        })
        .collect()
}
