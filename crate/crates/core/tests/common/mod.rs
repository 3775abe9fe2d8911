//! Shared helpers for the integration suites: finite-difference oracles and
//! toy data builders. Everything here is independent of the reverse-mode
//! path it is used to check.
//!
//! Each integration-test binary compiles this module separately and uses a
//! different subset of it.
#![allow(dead_code)]

use dsvb_core::dynconn::DynamicGraphSequence;
use dsvb_core::mat::Mat;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

/// Central finite differences of a scalar function at `x0`.
pub fn central_differences(x0: &[f64], mut f: impl FnMut(&[f64]) -> f64, h: f64) -> Vec<f64> {
    let mut x = x0.to_vec();
    let mut grad = vec![0.0; x0.len()];
    for i in 0..x0.len() {
        let orig = x[i];
        x[i] = orig + h;
        let plus = f(&x);
        x[i] = orig - h;
        let minus = f(&x);
        x[i] = orig;
        grad[i] = (plus - minus) / (2.0 * h);
    }
    grad
}

/// Relative error with a floor so that near-zero pairs compare absolutely.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Largest elementwise relative error between two gradient vectors.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| rel_err(a, n, floor))
        .fold(0.0, f64::max)
}

/// Random-ish sparse symmetric toy graph sequence.
pub fn toy_sequence(n: usize, t_max: usize, label: usize, seed: u64) -> DynamicGraphSequence<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut adjacency = Vec::new();
    let mut weights = Vec::new();
    for _ in 0..=t_max {
        let mut w: Mat<f64> = Mat::zeros(n, n);
        let mut a: Mat<f64> = Mat::zeros(n, n);
        for i in 0..n {
            for j in (i + 1)..n {
                let v: f64 = rng.gen_range(-1.0..1.0);
                *w.at_mut(i, j) = v;
                *w.at_mut(j, i) = v;
                if v.abs() > 0.35 {
                    *a.at_mut(i, j) = 1.0;
                    *a.at_mut(j, i) = 1.0;
                }
            }
        }
        adjacency.push(a);
        weights.push(w.clone());
    }
    DynamicGraphSequence {
        subject_id: format!("toy{seed}"),
        adjacency,
        features: weights.clone(),
        weights,
        label,
    }
}
