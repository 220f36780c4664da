//! Small dense linear-algebra helpers used throughout the solvers.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    debug_assert_eq!(m.nrows(), m.ncols());
    if m.nrows() == 1 {
        return m[(0, 0)];
    }
    m.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Largest eigenvalue of a symmetric PSD matrix via deterministic power iteration.
///
/// Starts from the normalized all-ones vector; `tol` is the relative change
/// tolerance on the Rayleigh quotient.
pub fn max_eigenvalue_power(m: &DMatrix<f64>, tol: f64, max_iter: usize) -> f64 {
    let d = m.nrows();
    if d == 1 {
        return m[(0, 0)];
    }
    let mut v = DVector::from_element(d, 1.0 / (d as f64).sqrt());
    let mut lambda = 0.0f64;
    for _ in 0..max_iter {
        let w = m * &v;
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        let next = v.dot(&w);
        v = w / norm;
        if (next - lambda).abs() <= tol * next.abs().max(1e-300) {
            return next;
        }
        lambda = next;
    }
    lambda
}

/// Smallest eigenvalue estimate via power iteration on `λ_max I - M`.
///
/// Coarse but cheap; used as a definiteness gate on large matrices where a
/// full eigendecomposition per call would dominate.
pub fn min_eigenvalue_power(m: &DMatrix<f64>, lmax: f64, tol: f64, max_iter: usize) -> f64 {
    let d = m.nrows();
    let shifted = DMatrix::from_fn(d, d, |i, j| {
        let v = -m[(i, j)];
        if i == j {
            v + lmax
        } else {
            v
        }
    });
    lmax - max_eigenvalue_power(&shifted, tol, max_iter)
}

/// Cholesky factorization of a symmetric positive-definite matrix.
///
/// On failure the error reports the smallest eigenvalue so callers can tell
/// "singular" from "indefinite".
pub fn cholesky(m: &DMatrix<f64>, context: &str) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(m.clone()).ok_or_else(|| Error::SingularMatrix {
        context: context.to_string(),
        min_eig: min_eigenvalue(m),
    })
}

/// Solve `m x = b` for symmetric positive-definite `m`.
pub fn solve_spd(m: &DMatrix<f64>, b: &DVector<f64>, context: &str) -> Result<DVector<f64>> {
    Ok(cholesky(m, context)?.solve(b))
}

/// True if the matrix has no nonzero off-diagonal entry.
pub fn is_diagonal(m: &DMatrix<f64>) -> bool {
    let (r, c) = m.shape();
    for i in 0..r {
        for j in 0..c {
            if i != j && m[(i, j)] != 0.0 {
                return false;
            }
        }
    }
    true
}
