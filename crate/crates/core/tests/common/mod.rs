#![allow(dead_code)]

use psbayes::glm::{expit, BinaryResponse, DesignMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normals(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    (0..k).map(|_| rng.sample(StandardNormal)).collect()
}

/// Intercept plus `q - 1` standard normal columns.
pub fn random_design(rng: &mut ChaCha8Rng, n: usize, q: usize) -> DesignMatrix {
    let mut values = Vec::with_capacity(n * q);
    for _ in 0..n {
        values.push(1.0);
        values.extend(normals(rng, q - 1));
    }
    DesignMatrix::new(n, q, values, true).unwrap()
}

/// Bernoulli draws from the logistic model `design · beta`.
pub fn logistic_response(rng: &mut ChaCha8Rng, design: &DesignMatrix, beta: &[f64]) -> BinaryResponse {
    let eta = design.linear_predictor(beta).unwrap();
    BinaryResponse::from_bools(eta.into_iter().map(|e| rng.random::<f64>() < expit(e)))
}

pub fn coin_flips(rng: &mut ChaCha8Rng, n: usize) -> BinaryResponse {
    BinaryResponse::from_bools((0..n).map(|_| rng.random::<bool>()))
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn sd(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// Monte Carlo SE of a mean of autocorrelated draws, by batch means.
pub fn batch_mcse(v: &[f64], batches: usize) -> f64 {
    let size = v.len() / batches;
    let means: Vec<f64> = (0..batches).map(|b| mean(&v[b * size..(b + 1) * size])).collect();
    sd(&means) / (batches as f64).sqrt()
}

pub fn column(draws: &[Vec<f64>], j: usize) -> Vec<f64> {
    draws.iter().map(|d| d[j]).collect()
}
