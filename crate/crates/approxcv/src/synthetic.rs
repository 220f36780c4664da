//! Seeded synthetic dataset generators.

use nalgebra::DVector;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dataset::Dataset;
use crate::error::Result;

/// Standard-normal design with a sparse standard-normal ground truth and
/// labels sampled from the logistic model. Rows are
/// `(x_1, ..., x_{n_features}[, 1], y)`; with `intercept` an all-ones column
/// is appended before the label (its true coefficient is 0).
///
/// Draw order is fixed (design matrix row-major, then coefficients, then
/// labels), so a given seed always produces the same bytes.
pub fn logistic_dataset(
    n: usize,
    n_features: usize,
    n_nonzero: usize,
    intercept: bool,
    seed: u64,
) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = StandardNormal;
    let mut xs = vec![vec![0.0f64; n_features]; n];
    for row in xs.iter_mut() {
        for v in row.iter_mut() {
            *v = normal.sample(&mut rng);
        }
    }
    let mut beta = vec![0.0f64; n_features];
    for b in beta.iter_mut().take(n_nonzero.min(n_features)) {
        *b = normal.sample(&mut rng);
    }
    let mut rows = Vec::with_capacity(n);
    for x in &xs {
        let t: f64 = x.iter().zip(&beta).map(|(a, b)| a * b).sum();
        let p = 1.0 / (1.0 + (-t).exp());
        let y = if rng.gen::<f64>() < p { 1.0 } else { 0.0 };
        let mut row = x.clone();
        if intercept {
            row.push(1.0);
        }
        row.push(y);
        rows.push(row);
    }
    Dataset::from_rows(&rows)
}

/// Standard-normal point cloud shifted by `mean` (quadratic-loss instances).
pub fn gaussian_dataset(n: usize, d: usize, mean: &[f64], seed: u64) -> Result<Dataset> {
    assert_eq!(mean.len(), d);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = StandardNormal;
    let mut points = Vec::with_capacity(n);
    for _ in 0..n {
        let mut p = DVector::zeros(d);
        for j in 0..d {
            let g: f64 = normal.sample(&mut rng);
            p[j] = mean[j] + g;
        }
        points.push(p);
    }
    Dataset::new(points)
}
