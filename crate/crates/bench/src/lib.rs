//! Deterministic input builders shared by the benchmark targets, kept out of
//! the bench files so each target measures only the kernel under test.

use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use stresslab::nalgebra::DMatrix;

/// Well-conditioned covariance at daily-return scale for `n` assets.
pub fn synthetic_cov(n: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let a = DMatrix::from_fn(n, n, |_, _| 0.01 * (rng.random::<f64>() - 0.5));
    &a * a.transpose() + DMatrix::identity(n, n) * 1e-5
}

/// Loss-like sample paths (rows = paths, columns = horizon days).
pub fn synthetic_paths(n_paths: usize, horizon: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    DMatrix::from_fn(n_paths, horizon, |_, _| 0.012 * (rng.random::<f64>() - 0.5))
}

/// Volatility-clustered daily returns for the GARCH fitting benchmark.
pub fn clustered_returns(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let (omega, alpha, beta) = (2e-6, 0.08, 0.90);
    let mut h = omega / (1.0 - alpha - beta);
    let mut eps = 0.0f64;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        if i > 0 {
            h = omega + alpha * eps * eps + beta * h;
        }
        // sum of uniforms as a cheap near-normal innovation
        let z: f64 = (0..4).map(|_| rng.random::<f64>() - 0.5).sum::<f64>() * (3.0f64).sqrt();
        eps = h.sqrt() * z;
        out.push(eps);
    }
    out
}

/// A document corpus of unit-scale embedding vectors for the index benchmark.
pub fn synthetic_corpus(n_docs: usize, dim: usize, seed: u64) -> Vec<(String, Vec<f64>)> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    (0..n_docs)
        .map(|i| {
            let v: Vec<f64> = (0..dim).map(|_| rng.random::<f64>() - 0.5).collect();
            (format!("doc{i:05}"), v)
        })
        .collect()
}
