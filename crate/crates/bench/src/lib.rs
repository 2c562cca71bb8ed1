//! Seeded input generators shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `n` rows of `p` small integer features, as survey encodings look.
pub fn integer_rows(n: usize, p: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| (0..p).map(|_| f64::from(r.random_range(1u8..=5))).collect())
        .collect()
}

/// Labels in `0..classes` that depend on the first two features, plus noise.
pub fn labels_for(rows: &[Vec<f64>], classes: usize, seed: u64) -> Vec<usize> {
    let mut r = rng(seed);
    rows.iter()
        .map(|x| {
            let base = (x[0] + x.get(1).copied().unwrap_or(0.0)) as usize;
            if r.random::<f64>() < 0.1 {
                r.random_range(0..classes)
            } else {
                base % classes
            }
        })
        .collect()
}

/// Unit vectors of dimension `dim`.
pub fn unit_vectors(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| {
            let v: Vec<f64> = (0..dim).map(|_| r.random_range(-1.0..1.0)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            v.into_iter().map(|x| x / norm).collect()
        })
        .collect()
}
