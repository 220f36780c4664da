//! Numeric checks of the optimizer-comparison inequalities that underpin the
//! assessment bounds. Every residual returned here is `LHS - RHS` of an
//! inequality that must be nonpositive.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::linalg;
use crate::model::Model;
use crate::solver::{prox_quadratic, SolverConfig};

/// `φ(x) = ½ (x - m)' Q (x - m) + offset` with `Q` symmetric positive definite.
#[derive(Debug, Clone)]
pub struct QuadraticObjective {
    pub q: DMatrix<f64>,
    pub minimizer: DVector<f64>,
    pub offset: f64,
}

impl QuadraticObjective {
    pub fn value(&self, x: &DVector<f64>) -> f64 {
        let r = x - &self.minimizer;
        0.5 * r.dot(&(&self.q * &r)) + self.offset
    }

    pub fn grad(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.q * (x - &self.minimizer)
    }

    pub fn mu(&self) -> f64 {
        linalg::min_eigenvalue(&self.q)
    }
}

/// Residuals of the two optimizer-comparison inequalities for a pair of
/// strongly convex quadratics: the error-bound form
/// `ν₁(‖x₁-x₂‖) + ν₂(‖x₁-x₂‖) ≤ φ₂(x₁) - φ₁(x₁) - (φ₂(x₂) - φ₁(x₂))`
/// with `ν_i(r) = μ_i r²/2`, and the gradient-growth form
/// `ν₂(‖x₁-x₂‖) ≤ ⟨x₁-x₂, ∇(φ₂-φ₁)(x₁)⟩` with `ν₂(r) = μ₂ r²`.
pub fn optimizer_comparison_residuals(
    f1: &QuadraticObjective,
    f2: &QuadraticObjective,
) -> (f64, f64) {
    let x1 = &f1.minimizer;
    let x2 = &f2.minimizer;
    let dist = (x1 - x2).norm();
    let lhs_eb = 0.5 * (f1.mu() + f2.mu()) * dist * dist;
    let rhs_eb = f2.value(x1) - f1.value(x1) - (f2.value(x2) - f1.value(x2));
    let eb_residual = lhs_eb - rhs_eb;

    let lhs_gg = f2.mu() * dist * dist;
    let diff_grad = f2.grad(x1) - f1.grad(x1);
    let rhs_gg = (x1 - x2).dot(&diff_grad);
    let gg_residual = lhs_gg - rhs_gg;

    (eb_residual, gg_residual)
}

/// Residual of the second-order Taylor-comparison bound
/// `‖x_φ - x_φ̂‖ ≤ (Lip(∇²φ)/μ) ‖x_φ - w‖²/2`
/// where `x_φ̂` minimizes the quadratic model of `φ` about `w`, and
/// `μ = λ_min(∇²φ(w))` is the model curvature. When `regularized` is set the
/// model carries the extra `Lip/3! ‖x-w‖³` term and the factor 2 enters the
/// right-hand side.
#[allow(clippy::too_many_arguments)]
pub fn taylor_comparison_residual(
    value: &dyn Fn(&DVector<f64>) -> f64,
    grad: &dyn Fn(&DVector<f64>) -> DVector<f64>,
    hess: &dyn Fn(&DVector<f64>) -> DMatrix<f64>,
    lip_hess: f64,
    w: &DVector<f64>,
    regularized: bool,
) -> Result<f64> {
    // exact minimizer by damped Newton
    let mut x = w.clone();
    for _ in 0..200 {
        let g = grad(&x);
        if g.norm() <= 1e-12 {
            break;
        }
        let h = hess(&x);
        let dir = -linalg::solve_spd(&h, &g, "taylor residual Newton")?;
        let f0 = value(&x);
        let slope = g.dot(&dir);
        let mut t = 1.0;
        while t > 1e-14 {
            let cand = &x + &dir * t;
            if value(&cand) <= f0 + 1e-4 * t * slope {
                x = cand;
                break;
            }
            t *= 0.5;
        }
    }
    let h_w = hess(w);
    let g_w = grad(w);
    let mu = linalg::min_eigenvalue(&h_w);

    let x_model = if !regularized {
        w - linalg::solve_spd(&h_w, &g_w, "taylor model")?
    } else {
        // minimize  g'Δ + ½Δ'HΔ + (Lip/3!)‖Δ‖³  by Newton from 0
        let d = w.len();
        let mut delta = DVector::zeros(d);
        for _ in 0..200 {
            let nd = delta.norm();
            let g = &g_w + &h_w * &delta
                + &delta * (if nd > 0.0 { lip_hess / 2.0 * nd } else { 0.0 });
            if g.norm() <= 1e-13 {
                break;
            }
            let mut h = h_w.clone();
            if nd > 0.0 {
                h += DMatrix::identity(d, d) * (lip_hess / 2.0 * nd);
                h += (&delta * delta.transpose()) * (lip_hess / 2.0 / nd);
            }
            let dir = -linalg::solve_spd(&h, &g, "regularized taylor model")?;
            delta += dir;
        }
        w + delta
    };

    let lhs = (&x - &x_model).norm();
    let factor = if regularized { 2.0 } else { 1.0 };
    let rhs = factor * lip_hess / mu * 0.5 * (&x - w).norm_squared();
    Ok(lhs - rhs)
}

/// Residual of the proximal-Newton comparison
/// `‖β_H - β_H̃‖ ≤ ‖(H̃ - H)(β_H - β)‖ / λ_min(H̃)`
/// for `β_H = prox_{λπ}^{H}(β - H⁻¹g)` and likewise for `H̃`.
pub fn prox_newton_comparison_residual(
    h: &DMatrix<f64>,
    h_tilde: &DMatrix<f64>,
    beta: &DVector<f64>,
    g: &DVector<f64>,
    model: &Model,
    lambda: f64,
    cfg: &SolverConfig,
) -> Result<f64> {
    let b_h = prox_quadratic(h, beta, g, model, lambda, cfg)?;
    let b_ht = prox_quadratic(h_tilde, beta, g, model, lambda, cfg)?;
    let lhs = (&b_h - &b_ht).norm();
    let rhs = ((h_tilde - h) * (&b_h - beta)).norm() / linalg::min_eigenvalue(h_tilde);
    Ok(lhs - rhs)
}

/// All four residuals for a pair of strongly convex quadratic objectives; the
/// Taylor check uses `φ₁` expanded about `φ₂`'s minimizer (its quadratic model
/// is exact), and the proximal-Newton check compares steps under the two
/// curvature matrices.
#[derive(Debug, Clone, Copy)]
pub struct LemmaResiduals {
    pub errorbound: f64,
    pub growth: f64,
    pub taylor: f64,
    pub proxnewton: f64,
}

pub fn lemma_residuals(
    f1: &QuadraticObjective,
    f2: &QuadraticObjective,
    model: &Model,
    lambda: f64,
    cfg: &SolverConfig,
) -> Result<LemmaResiduals> {
    let (errorbound, growth) = optimizer_comparison_residuals(f1, f2);
    let taylor = taylor_comparison_residual(
        &|x| f1.value(x),
        &|x| f1.grad(x),
        &|_| f1.q.clone(),
        0.0,
        &f2.minimizer,
        false,
    )?;
    let g = f1.grad(&f2.minimizer);
    let proxnewton =
        prox_newton_comparison_residual(&f1.q, &f2.q, &f2.minimizer, &g, model, lambda, cfg)?;
    Ok(LemmaResiduals {
        errorbound,
        growth,
        taylor,
        proxnewton,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Loss, Reg};

    #[test]
    fn identical_objectives_have_zero_residuals() {
        let q = DMatrix::identity(2, 2) * 2.0;
        let m = DVector::from_vec(vec![0.3, -0.4]);
        let f = QuadraticObjective {
            q,
            minimizer: m,
            offset: 0.1,
        };
        let (eb, gg) = optimizer_comparison_residuals(&f, &f);
        assert!(eb.abs() < 1e-14 && gg.abs() < 1e-14);
    }

    #[test]
    fn scalar_closed_form_pair() {
        // φ₁ = (x-1)², φ₂ = 2(x+1)²: μ₁ = 2, μ₂ = 4, dist = 2.
        let f1 = QuadraticObjective {
            q: DMatrix::from_vec(1, 1, vec![2.0]),
            minimizer: DVector::from_vec(vec![1.0]),
            offset: 0.0,
        };
        let f2 = QuadraticObjective {
            q: DMatrix::from_vec(1, 1, vec![4.0]),
            minimizer: DVector::from_vec(vec![-1.0]),
            offset: 0.0,
        };
        let (eb, gg) = optimizer_comparison_residuals(&f1, &f2);
        // error bound: (1 + 2)·4 = 12 vs φ₂(1)-φ₁(1)-φ₂(-1)+φ₁(-1) = 8-0-0+4 = 12
        assert!(eb.abs() < 1e-12, "{eb}");
        // growth: 4·4 = 16 vs ⟨2, ∇φ₂(1) - 0⟩ = 2·8 = 16
        assert!(gg.abs() < 1e-12, "{gg}");
        let model = Model::new(Loss::squared(), Reg::L1);
        let res = lemma_residuals(&f1, &f2, &model, 0.3, &SolverConfig::default()).unwrap();
        assert!(res.errorbound <= 1e-12);
        assert!(res.growth <= 1e-12);
        assert!(res.taylor <= 1e-9);
        assert!(res.proxnewton <= 1e-9);
    }
}
