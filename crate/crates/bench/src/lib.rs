//! Seeded inputs shared by the benchmarks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vsrpp_core::Tensor;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random(shape: &[usize], lo: f64, hi: f64, seed: u64) -> Tensor {
    Tensor::uniform(shape, lo, hi, &mut rng(seed))
}

/// `n` random RGB LR frames of `size × size`.
pub fn frames(n: usize, size: usize, seed: u64) -> Vec<Tensor> {
    (0..n)
        .map(|i| random(&[1, 3, size, size], 0.0, 1.0, seed + i as u64))
        .collect()
}
