//! Seeded input generators shared by the benchmarks.

use observatory_core::EmbeddingSpace;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `n` dense vectors of dimension `dim` with entries in `[-1, 1)`.
pub fn random_vectors(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect()
}

pub fn random_pairs(n: usize, seed: u64) -> Vec<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (rng.gen(), rng.gen())).collect()
}

/// Space with keys `e0..e{n-1}`.
pub fn random_space(n: usize, dim: usize, seed: u64) -> EmbeddingSpace {
    let mut space = EmbeddingSpace::new("bench", dim);
    for (i, v) in random_vectors(n, dim, seed).into_iter().enumerate() {
        space.insert(format!("e{i}"), v).expect("nonzero random vector");
    }
    space
}

/// Column of `n` short pseudo-words.
pub fn random_column(n: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            (0..rng.gen_range(3..9))
                .map(|_| rng.gen_range(b'a'..=b'z') as char)
                .collect()
        })
        .collect()
}
