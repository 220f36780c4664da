//! Proximal-Newton approximations to CV for non-smooth regularizers: the loss
//! is Taylor-expanded about the full-data fit while the penalty is kept exact.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::acv::{ApproxResult, Method};
use crate::dataset::{Dataset, Lambda, Weights};
use crate::error::{Error, Result};
use crate::model::{Link, Loss, Model};
use crate::solver::{prox_quadratic, FitResult, SolverConfig};

fn assemble(
    model: &Model,
    data: &Dataset,
    lambda: f64,
    method: Method,
    estimators: Vec<DVector<f64>>,
) -> ApproxResult {
    let heldout: Vec<f64> = estimators
        .iter()
        .enumerate()
        .map(|(i, b)| model.heldout_loss(data, i, b))
        .collect();
    let value = heldout.iter().sum::<f64>() / heldout.len() as f64;
    ApproxResult {
        lambda: Lambda::Finite(lambda),
        method,
        estimators,
        heldout,
        value,
    }
}

fn require_prox(model: &Model) -> Result<()> {
    if model.reg.prox_capable() {
        Ok(())
    } else {
        Err(Error::NotProxCapable)
    }
}

/// `β̌_i = prox_{λπ}^{H_{ℓ,i}}(β̂ - H_{ℓ,i}⁻¹ g_{ℓ,i})` with the leave-one-out
/// loss Hessian `H_{ℓ,i} = ∇²ℓ(P_{-i}, β̂)` and gradient `g_{ℓ,i} = ∇ℓ(P_{-i}, β̂)`.
pub fn proxacv(
    model: &Model,
    data: &Dataset,
    lambda: f64,
    fit: &FitResult,
    cfg: &SolverConfig,
) -> Result<ApproxResult> {
    require_prox(model)?;
    let n = data.n();
    let beta = &fit.beta;
    let w = Weights::full(n);
    let full_grad = model.loss_grad(data, &w, beta);
    let full_hess = model.loss_hess(data, &w, beta);
    let estimators: Vec<DVector<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let gi = &full_grad - model.loss.grad(data.point(i), beta) / n as f64;
            let hi = &full_hess - model.loss.hess(data.point(i), beta) / n as f64;
            prox_quadratic(&hi, beta, &gi, model, lambda, cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(assemble(model, data, lambda, Method::ProxAcv, estimators))
}

/// Infinitesimal-jackknife variant sharing the full-data loss Hessian.
pub fn proxacv_ij(
    model: &Model,
    data: &Dataset,
    lambda: f64,
    fit: &FitResult,
    cfg: &SolverConfig,
) -> Result<ApproxResult> {
    require_prox(model)?;
    let n = data.n();
    let beta = &fit.beta;
    let w = Weights::full(n);
    let full_grad = model.loss_grad(data, &w, beta);
    let full_hess = model.loss_hess(data, &w, beta);
    let estimators: Vec<DVector<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let gi = &full_grad - model.loss.grad(data.point(i), beta) / n as f64;
            prox_quadratic(&full_hess, beta, &gi, model, lambda, cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(assemble(model, data, lambda, Method::ProxAcvIj, estimators))
}

/// Lipschitz constant of `∇^p ℓ(P_{-i}, ·)` (loss only), for the regularized
/// higher-order variants.
fn loss_taylor_lipschitz(model: &Model, data: &Dataset, p: u32) -> Result<f64> {
    let n = data.n() as f64;
    match (&model.loss, p) {
        (Loss::Quadratic { .. }, _) => Ok(0.0),
        (Loss::Glm { link: Link::Logistic }, 2) => {
            let s: f64 = (0..data.n())
                .map(|i| {
                    let z = data.point(i);
                    (0..z.len() - 1).map(|j| z[j] * z[j]).sum::<f64>().powf(1.5)
                })
                .sum();
            Ok(0.09622504486493764 * s / n)
        }
        (Loss::Glm { link: Link::Logistic }, 3) => {
            let s: f64 = (0..data.n())
                .map(|i| {
                    let z = data.point(i);
                    (0..z.len() - 1).map(|j| z[j] * z[j]).sum::<f64>().powi(2)
                })
                .sum();
            Ok(0.125 * s / n)
        }
        (Loss::Custom(c), 2) => c
            .hess_lipschitz
            .ok_or_else(|| Error::BoundsNotEvaluable("custom loss needs hess_lipschitz".into())),
        (Loss::Custom(c), 3) => c
            .third_lipschitz
            .ok_or_else(|| Error::BoundsNotEvaluable("custom loss needs third_lipschitz".into())),
        _ => Err(Error::BoundsNotEvaluable(format!(
            "no order-{} Lipschitz constant for this loss",
            p + 1
        ))),
    }
}

/// Higher-order proximal variant: minimize the p-th order Taylor model of the
/// leave-one-out loss (optionally regularized by `Lip/(p+1) ‖β-β̂‖^{p+1}`)
/// plus the exact penalty, by an inner proximal-Newton loop.
pub fn proxacv_p(
    model: &Model,
    data: &Dataset,
    lambda: f64,
    fit: &FitResult,
    p: u32,
    regularized: bool,
    cfg: &SolverConfig,
) -> Result<ApproxResult> {
    require_prox(model)?;
    if p != 2 && p != 3 {
        return Err(Error::InvalidConfig(format!(
            "proxacv_p requires p in {{2, 3}}, got {p}"
        )));
    }
    let n = data.n();
    let beta = &fit.beta;
    let d = beta.len();
    let rho = if regularized {
        loss_taylor_lipschitz(model, data, p)? / (p as f64 + 1.0)
    } else {
        0.0
    };
    let w_full = Weights::full(n);
    let full_grad = model.loss_grad(data, &w_full, beta);
    let full_hess = model.loss_hess(data, &w_full, beta);
    let inner_tol = 1e-11;

    let estimators: Vec<DVector<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let w = Weights::leave_out(n, i);
            let g0 = &full_grad - model.loss.grad(data.point(i), beta) / n as f64;
            let h0 = &full_hess - model.loss.hess(data.point(i), beta) / n as f64;
            // smooth part of the fold model, as functions of Δ = u - β̂
            let sgrad = |delta: &DVector<f64>| -> Result<DVector<f64>> {
                let mut g = &g0 + &h0 * delta;
                if p >= 3 {
                    g += model.loss_third_vv(data, &w, beta, delta)? * 0.5;
                }
                if rho > 0.0 {
                    let nd = delta.norm();
                    if nd > 0.0 {
                        g += delta * (rho * (p as f64 + 1.0) * nd.powi(p as i32 - 1));
                    }
                }
                Ok(g)
            };
            let shess = |delta: &DVector<f64>| -> Result<DMatrix<f64>> {
                let mut h = h0.clone();
                if p >= 3 {
                    h += model.loss_third_mat(data, &w, beta, delta)?;
                }
                if rho > 0.0 {
                    let nd = delta.norm();
                    if nd > 0.0 {
                        let c = rho * (p as f64 + 1.0);
                        h += DMatrix::identity(d, d) * (c * nd.powi(p as i32 - 1));
                        h += (delta * delta.transpose())
                            * (c * (p as f64 - 1.0) * nd.powi(p as i32 - 3));
                    }
                }
                Ok(h)
            };
            let svalue = |delta: &DVector<f64>| -> Result<f64> {
                let mut v = g0.dot(delta) + 0.5 * delta.dot(&(&h0 * delta));
                if p >= 3 {
                    v += model.loss_third_vv(data, &w, beta, delta)?.dot(delta) / 6.0;
                }
                if rho > 0.0 {
                    v += rho * delta.norm().powi(p as i32 + 1);
                }
                Ok(v)
            };
            let objective = |u: &DVector<f64>| -> Result<f64> {
                Ok(svalue(&(u - beta))? + lambda * model.reg.value(u))
            };

            let mut u = beta.clone();
            for _ in 0..cfg.max_iter {
                let delta = &u - beta;
                let g = sgrad(&delta)?;
                let h = shess(&delta)?;
                let target = prox_quadratic(&h, &u, &g, model, lambda, cfg)?;
                let dir = &target - &u;
                if dir.norm() <= inner_tol {
                    return Ok(target);
                }
                let f0 = objective(&u)?;
                let slope = g.dot(&dir)
                    + lambda * (model.reg.value(&target) - model.reg.value(&u));
                let mut t = 1.0;
                let mut moved = false;
                while t > 1e-14 {
                    let cand = &u + &dir * t;
                    if objective(&cand)? <= f0 + cfg.ls_c * t * slope + 4.0 * f64::EPSILON * f0.abs() {
                        u = cand;
                        moved = true;
                        break;
                    }
                    t *= cfg.ls_factor;
                }
                if !moved {
                    break;
                }
            }
            let delta = &u - beta;
            let g = sgrad(&delta)?;
            let h = shess(&delta)?;
            let resid = (prox_quadratic(&h, &u, &g, model, lambda, cfg)? - &u).norm();
            if resid <= 1e-9 {
                Ok(u)
            } else {
                Err(Error::NonConvergence {
                    context: format!("proxacv_p fold {i}"),
                    residual: resid,
                    iterations: cfg.max_iter,
                })
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(assemble(
        model,
        data,
        lambda,
        Method::ProxAcvP { p, regularized },
        estimators,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cv::{exact_cv, make_folds, FoldKind};
    use crate::model::Reg;
    use crate::solver::fit_erm;

    fn fit(model: &Model, data: &Dataset, lam: f64) -> FitResult {
        fit_erm(
            model,
            data,
            &Weights::full(data.n()),
            Lambda::Finite(lam),
            &SolverConfig::default(),
            None,
        )
        .unwrap()
    }

    #[test]
    fn zero_penalty_matches_newton_step_on_loss() {
        let data = Dataset::from_rows(&[
            vec![0.5, 1.0, 1.0],
            vec![-0.2, 0.8, 0.0],
            vec![1.4, -0.6, 1.0],
            vec![0.1, 0.2, 0.0],
            vec![0.7, -0.9, 1.0],
        ])
        .unwrap();
        // λ = 0 on an l1 model: prox is the identity, so the estimators are
        // plain Newton steps on the loss.
        let model = Model::new(Loss::logistic(), Reg::L1);
        let cfg = SolverConfig::default();
        let f = fit(&model, &data, 1e-3);
        let pa = proxacv(&model, &data, 0.0, &f, &cfg).unwrap();
        let n = data.n();
        let w = Weights::full(n);
        let fg = model.loss_grad(&data, &w, &f.beta);
        let fh = model.loss_hess(&data, &w, &f.beta);
        for i in 0..n {
            let gi = &fg - model.loss.grad(data.point(i), &f.beta) / n as f64;
            let hi = &fh - model.loss.hess(data.point(i), &f.beta) / n as f64;
            let newton = &f.beta - crate::linalg::solve_spd(&hi, &gi, "test").unwrap();
            assert!((pa.estimators[i].clone() - newton).norm() < 1e-10);
        }
    }

    #[test]
    fn quadratic_l1_proxacv_equals_exact_cv() {
        let data = Dataset::from_scalars(&[0.8, 0.15, 1.4, 0.55, -0.2, 0.9]).unwrap();
        let model = Model::new(Loss::squared(), Reg::L1);
        let cfg = SolverConfig::default();
        let scheme = make_folds(6, FoldKind::LeaveOneOut).unwrap();
        for lam in [0.0, 0.05, 0.2, 0.6] {
            let f = fit(&model, &data, lam);
            let cv = exact_cv(&model, &data, Lambda::Finite(lam), &scheme, &cfg, Some(&f)).unwrap();
            let pa = proxacv(&model, &data, lam, &f, &cfg).unwrap();
            assert!(
                (pa.value - cv.cv_value).abs() < 1e-11,
                "λ = {lam}: {} vs {}",
                pa.value,
                cv.cv_value
            );
        }
    }

    #[test]
    fn lasso_per_fold_estimator_is_soft_threshold_of_newton_target() {
        let vals = [0.7, -0.4, 1.2, 0.3, 0.9];
        let data = Dataset::from_scalars(&vals).unwrap();
        let n = 5.0;
        let model = Model::new(Loss::squared(), Reg::L1);
        let cfg = SolverConfig::default();
        let lam = 0.25;
        let f = fit(&model, &data, lam);
        let pa = proxacv(&model, &data, lam, &f, &cfg).unwrap();
        let zbar: f64 = vals.iter().sum::<f64>() / n;
        for (i, &z) in vals.iter().enumerate() {
            // Newton target is the leave-one-out mean; threshold λ/H with H = (n-1)/n
            let h = (n - 1.0) / n;
            let target = (n * zbar - z) / (n - 1.0);
            let expect = target.signum() * (target.abs() - lam / h).max(0.0);
            assert!(
                (pa.estimators[i][0] - expect).abs() < 1e-8,
                "fold {i}: {} vs {expect}",
                pa.estimators[i][0]
            );
        }
    }

    #[test]
    fn stationary_point_with_zero_penalty_is_fixed() {
        // π ≡ 0 (λ = 0) and β̂ a loss stationary point -> estimators stay at β̂
        // when the per-fold gradients vanish (identical points).
        let data = Dataset::from_scalars(&[0.6, 0.6, 0.6, 0.6]).unwrap();
        let model = Model::new(Loss::squared(), Reg::L1);
        let cfg = SolverConfig::default();
        let f = fit(&model, &data, 0.0);
        let pj = proxacv_ij(&model, &data, 0.0, &f, &cfg).unwrap();
        for est in &pj.estimators {
            assert!((est - &f.beta).norm() < 1e-13);
        }
    }

    #[test]
    fn prox_fixed_point_identity() {
        // β̂(λ) = prox_{λπ}^{H_{ℓ,i}}(β̂ - H_{ℓ,i}⁻¹ ∇ℓ(P̂, β̂)) for every fold
        let data = Dataset::from_scalars(&[0.8, 0.15, 1.4, 0.55]).unwrap();
        let model = Model::new(Loss::squared(), Reg::L1);
        let cfg = SolverConfig::default();
        let lam = 0.3;
        let f = fit(&model, &data, lam);
        let n = data.n();
        let w = Weights::full(n);
        let fg = model.loss_grad(&data, &w, &f.beta);
        let fh = model.loss_hess(&data, &w, &f.beta);
        for i in 0..n {
            let hi = &fh - model.loss.hess(data.point(i), &f.beta) / n as f64;
            let out = prox_quadratic(&hi, &f.beta, &fg, &model, lam, &cfg).unwrap();
            assert!((out - &f.beta).norm() < 1e-9);
        }
    }

    #[test]
    fn proxacv_p2_reproduces_proxacv() {
        let data = Dataset::from_rows(&[
            vec![0.5, 1.0, 1.0],
            vec![-0.2, 0.8, 0.0],
            vec![1.4, -0.6, 1.0],
            vec![0.1, 0.2, 0.0],
            vec![0.7, -0.9, 1.0],
        ])
        .unwrap();
        let model = Model::new(Loss::logistic(), Reg::L1);
        let cfg = SolverConfig::default();
        let lam = 0.05;
        let f = fit(&model, &data, lam);
        let pa = proxacv(&model, &data, lam, &f, &cfg).unwrap();
        let p2 = proxacv_p(&model, &data, lam, &f, 2, false, &cfg).unwrap();
        assert!((pa.value - p2.value).abs() < 1e-11);
    }

    #[test]
    fn proxacv_p3_exact_for_quadratic_loss() {
        let data = Dataset::from_scalars(&[0.8, 0.15, 1.4, 0.55, -0.2]).unwrap();
        let model = Model::new(Loss::squared(), Reg::L1);
        let cfg = SolverConfig::default();
        let lam = 0.2;
        let f = fit(&model, &data, lam);
        let scheme = make_folds(5, FoldKind::LeaveOneOut).unwrap();
        let cv = exact_cv(&model, &data, Lambda::Finite(lam), &scheme, &cfg, Some(&f)).unwrap();
        let p3 = proxacv_p(&model, &data, lam, &f, 3, false, &cfg).unwrap();
        assert!((p3.value - cv.cv_value).abs() < 1e-10);
    }
}
