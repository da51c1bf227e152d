//! Oracles shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_signal(n: usize, seed: u64) -> Vec<f64> {
    let mut r = rng(seed);
    (0..n).map(|_| r.gen_range(-1.0..1.0)).collect()
}

/// `X[m] = (1/N) sum_k x[k] e^{-i 2 pi m k / N}` by direct summation.
pub fn naive_dft(x: &[f64]) -> Vec<Complex64> {
    let n = x.len();
    (0..n)
        .map(|m| {
            x.iter()
                .enumerate()
                .map(|(k, &v)| v * Complex64::from_polar(1.0, -2.0 * PI * (m * k) as f64 / n as f64))
                .sum::<Complex64>()
                / n as f64
        })
        .collect()
}

/// Discrete S-Transform by direct summation over the centered offsets
/// `m in [-N/2, N/2)`, rows `0..=N/2`, row 0 the signal mean.
pub fn naive_st(x: &[f64]) -> Vec<Vec<Complex64>> {
    let n = x.len();
    let spec = naive_dft(x);
    let half = n as i64 / 2;
    let mut rows = vec![vec![Complex64::new(x.iter().sum::<f64>() / n as f64, 0.0); n]];
    for row in 1..=n / 2 {
        let nf = row as f64;
        let r: Vec<Complex64> = (0..n)
            .map(|j| {
                (-half..half)
                    .map(|m| {
                        let bin = (m + row as i64).rem_euclid(n as i64) as usize;
                        let g = (-2.0 * PI * PI * (m * m) as f64 / (nf * nf)).exp();
                        spec[bin] * g * Complex64::from_polar(1.0, 2.0 * PI * (m * j as i64) as f64 / n as f64)
                    })
                    .sum()
            })
            .collect();
        rows.push(r);
    }
    rows
}
