//! Fixtures shared by the benchmarks.

use emshap::model::{Squash, ZooModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_rows(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut r = rng(seed);
    (0..n).map(|_| (0..d).map(|_| r.random_range(-1.0..1.0)).collect()).collect()
}

/// Linear model with weights `1, -1/2, 1/3, ...`.
pub fn linear_model(d: usize) -> ZooModel {
    let w = (0..d).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 } / (i + 1) as f64).collect();
    ZooModel::linear(w, 0.0, Squash::None)
}
