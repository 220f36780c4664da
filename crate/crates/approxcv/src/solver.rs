//! Fitting of regularized ERM estimators, the generalized proximal operator,
//! and the single Newton / proximal-Newton steps used by the approximations.

use nalgebra::{DMatrix, DVector};

use crate::dataset::{Dataset, Lambda, Weights};
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::Model;

#[derive(Debug, Clone)]
pub struct SolverConfig {
    /// Residual tolerance for fits: gradient norm (smooth) or prox fixed-point
    /// norm (non-smooth).
    pub tol_fit: f64,
    /// Outer iteration cap.
    pub max_iter: usize,
    /// Relative objective-decrease tolerance for the accelerated inner loop.
    pub inner_tol: f64,
    pub inner_max_iter: usize,
    /// Backtracking factor and sufficient-decrease constant.
    pub ls_factor: f64,
    pub ls_c: f64,
    /// Power-iteration tolerance for the inner step size 1/L.
    pub power_tol: f64,
    /// Warm-start fits along λ grids and folds from the previous solution.
    pub warm_start: bool,
    /// Support-detection threshold for the restricted variants.
    pub support_eps: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol_fit: 1e-10,
            max_iter: 200,
            inner_tol: 1e-12,
            inner_max_iter: 10_000,
            ls_factor: 0.5,
            ls_c: 1e-4,
            power_tol: 1e-8,
            warm_start: true,
            support_eps: 1e-12,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub lambda: Lambda,
    pub beta: DVector<f64>,
    pub objective: f64,
    /// Gradient norm (smooth) or prox fixed-point residual (non-smooth).
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Newton step `β₀ - H⁻¹ g`.
pub fn newton_step(beta0: &DVector<f64>, g: &DVector<f64>, h: &DMatrix<f64>) -> Result<DVector<f64>> {
    Ok(beta0 - linalg::solve_spd(h, g, "newton_step")?)
}

/// Proximal Newton step `prox_{λπ}^{H}(β₀ - H⁻¹ g)`, computed without forming
/// `H⁻¹` so that positive semidefinite `H` is acceptable.
pub fn prox_newton_step(
    beta0: &DVector<f64>,
    g_loss: &DVector<f64>,
    h_loss: &DMatrix<f64>,
    model: &Model,
    lambda: f64,
    cfg: &SolverConfig,
) -> Result<DVector<f64>> {
    prox_quadratic(h_loss, beta0, g_loss, model, lambda, cfg)
}

/// Generalized proximal operator `prox_{λπ}^{H}(v) = argmin ½‖v-β‖²_H + λπ(β)`.
///
/// `H` must be symmetric positive definite.
pub fn generalized_prox(
    h: &DMatrix<f64>,
    v: &DVector<f64>,
    model: &Model,
    lambda: f64,
    cfg: &SolverConfig,
) -> Result<DVector<f64>> {
    let min_eig = if linalg::is_diagonal(h) {
        h.diagonal().iter().copied().fold(f64::INFINITY, f64::min)
    } else {
        linalg::min_eigenvalue(h)
    };
    if min_eig <= 0.0 {
        return Err(Error::SingularMatrix {
            context: "generalized_prox: H must be positive definite".into(),
            min_eig,
        });
    }
    prox_quadratic(h, v, &DVector::zeros(v.len()), model, lambda, cfg)
}

/// Minimize `½ (β-c)' H (β-c) + g'(β-c) + λ π(β)`.
///
/// This is the prox form `prox_{λπ}^{H}(c - H⁻¹g)` written without `H⁻¹`;
/// `H` may be positive semidefinite (rank-deficient loss Hessians occur when
/// the parameter dimension exceeds the number of points). Solved in closed
/// form when `H` is diagonal and the penalty is separable, otherwise by an
/// accelerated proximal-gradient loop with fixed step `1/λ_max(H)`.
pub fn prox_quadratic(
    h: &DMatrix<f64>,
    center: &DVector<f64>,
    g: &DVector<f64>,
    model: &Model,
    lambda: f64,
    cfg: &SolverConfig,
) -> Result<DVector<f64>> {
    let d = center.len();
    debug_assert_eq!(h.nrows(), d);
    debug_assert_eq!(g.len(), d);

    if linalg::is_diagonal(h) && h.diagonal().iter().all(|&x| x > 0.0) {
        let out = DVector::from_fn(d, |j, _| {
            let hj = h[(j, j)];
            model.reg.prox_1d(hj, center[j] - g[j] / hj, lambda)
        });
        return Ok(out);
    }

    if lambda == 0.0 {
        // unconstrained quadratic; exact when H is nonsingular
        if let Some(ch) = nalgebra::Cholesky::new(h.clone()) {
            return Ok(center - ch.solve(g));
        }
    }

    let lmax = linalg::max_eigenvalue_power(h, cfg.power_tol, 10_000);
    if !(lmax > 0.0) {
        return Err(Error::SingularMatrix {
            context: "prox_quadratic: H has no positive curvature".into(),
            min_eig: lmax,
        });
    }
    let min_eig = linalg::min_eigenvalue_power(h, lmax, 1e-4, 500);
    if min_eig < -1e-7 * lmax.max(1.0) {
        return Err(Error::SingularMatrix {
            context: "prox_quadratic: H is indefinite".into(),
            min_eig,
        });
    }

    let objective = |x: &DVector<f64>| -> f64 {
        let r = x - center;
        0.5 * r.dot(&(h * &r)) + g.dot(&r) + lambda * model.reg.value(x)
    };

    // small headroom over the power-iteration estimate of λ_max
    let lstep = lmax * (1.0 + 1e-6);
    let prox_step = |y: &DVector<f64>| -> DVector<f64> {
        let grad = h * (y - center) + g;
        DVector::from_fn(d, |j, _| {
            model.reg.prox_1d(lstep, y[j] - grad[j] / lstep, lambda)
        })
    };

    // Accelerated phase: run to an objective plateau.
    let mut x = center.clone();
    let mut y = x.clone();
    let mut t = 1.0f64;
    let mut fx = objective(&x);
    let mut plateaued = false;
    let mut last_step = f64::INFINITY;
    for k in 0..cfg.inner_max_iter {
        let x_new = prox_step(&y);
        let f_new = objective(&x_new);
        last_step = (&x_new - &x).norm();
        if f_new > fx {
            // momentum restart keeps the iteration monotone
            y = x.clone();
            t = 1.0;
            if last_step <= 1e-15 * (1.0 + x.norm()) {
                plateaued = true;
                break;
            }
            continue;
        }
        let t_new = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        y = &x_new + (&x_new - &x) * ((t - 1.0) / t_new);
        let plateau = (fx - f_new).abs() <= cfg.inner_tol * (1.0 + f_new.abs());
        x = x_new;
        fx = f_new;
        t = t_new;
        if plateau && k > 2 {
            plateaued = true;
            break;
        }
    }

    // Polish phase: plain proximal-gradient steps until the fixed-point
    // residual is at machine scale. Objective differences alone cannot
    // certify estimator-level accuracy.
    let mut polished = false;
    for _ in 0..cfg.inner_max_iter {
        let x_new = prox_step(&x);
        last_step = (&x_new - &x).norm();
        x = x_new;
        if last_step <= 1e-14 * (1.0 + x.norm()) {
            polished = true;
            break;
        }
    }

    if polished || plateaued {
        Ok(x)
    } else {
        Err(Error::NonConvergence {
            context: "prox_quadratic inner loop".into(),
            residual: last_step,
            iterations: cfg.inner_max_iter,
        })
    }
}

/// Fit the regularized ERM estimator `argmin_β Σ w_i ℓ(z_i, β) + λ π(β)`.
///
/// λ = ∞ returns `argmin π` analytically. Smooth regularizers use damped
/// Newton; prox-capable non-smooth regularizers use proximal Newton with a
/// backtracking line search. Non-convergence within `max_iter` is reported via
/// `converged = false` rather than an error.
pub fn fit_erm(
    model: &Model,
    data: &Dataset,
    w: &Weights,
    lambda: Lambda,
    cfg: &SolverConfig,
    warm: Option<&DVector<f64>>,
) -> Result<FitResult> {
    let d = model.param_dim(data);
    if let Lambda::Infinite = lambda {
        let beta = model.reg.argmin(d);
        let objective = model.loss_value(data, w, &beta);
        return Ok(FitResult {
            lambda,
            beta,
            objective,
            residual: 0.0,
            iterations: 0,
            converged: true,
        });
    }
    let lam = lambda.finite()?;
    let mut beta = match warm {
        Some(b) => {
            if b.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: b.len(),
                });
            }
            b.clone()
        }
        None => DVector::zeros(d),
    };

    if model.reg.smooth() {
        let mut iterations = 0;
        loop {
            let eval = model.evaluate(data, w, &beta, lambda)?;
            let resid = eval.gradient.norm();
            if resid <= cfg.tol_fit {
                return Ok(FitResult {
                    lambda,
                    beta,
                    objective: eval.value,
                    residual: resid,
                    iterations,
                    converged: true,
                });
            }
            if iterations >= cfg.max_iter {
                return Ok(FitResult {
                    lambda,
                    beta,
                    objective: eval.value,
                    residual: resid,
                    iterations,
                    converged: false,
                });
            }
            let dir = -linalg::solve_spd(&eval.hessian, &eval.gradient, "fit_erm Newton")?;
            let slope = eval.gradient.dot(&dir);
            let mut t = 1.0;
            let mut accepted = false;
            while t > 1e-14 {
                let cand = &beta + &dir * t;
                let val = model.objective_value(data, w, &cand, lam);
                // the epsilon term keeps the test meaningful once decreases
                // fall below float resolution
                if val <= eval.value + cfg.ls_c * t * slope + 4.0 * f64::EPSILON * eval.value.abs() {
                    beta = cand;
                    accepted = true;
                    break;
                }
                t *= cfg.ls_factor;
            }
            if !accepted {
                return Ok(FitResult {
                    lambda,
                    beta,
                    objective: eval.value,
                    residual: resid,
                    iterations,
                    converged: false,
                });
            }
            iterations += 1;
        }
    }

    if !model.reg.prox_capable() {
        return Err(Error::NotProxCapable);
    }
    let mut iterations = 0;
    loop {
        let g = model.loss_grad(data, w, &beta);
        let h = model.loss_hess(data, w, &beta);
        let target = prox_quadratic(&h, &beta, &g, model, lam, cfg)?;
        let dir = &target - &beta;
        let resid = dir.norm();
        let obj = model.objective_value(data, w, &beta, lam);
        if resid <= cfg.tol_fit {
            return Ok(FitResult {
                lambda,
                beta,
                objective: obj,
                residual: resid,
                iterations,
                converged: true,
            });
        }
        if iterations >= cfg.max_iter {
            return Ok(FitResult {
                lambda,
                beta,
                objective: obj,
                residual: resid,
                iterations,
                converged: false,
            });
        }
        // directional-derivative surrogate for the non-smooth Armijo test
        let slope =
            g.dot(&dir) + lam * (model.reg.value(&target) - model.reg.value(&beta));
        let mut t = 1.0;
        let mut accepted = false;
        while t > 1e-14 {
            let cand = &beta + &dir * t;
            let val = model.objective_value(data, w, &cand, lam);
            if val <= obj + cfg.ls_c * t * slope + 4.0 * f64::EPSILON * obj.abs() {
                beta = cand;
                accepted = true;
                break;
            }
            t *= cfg.ls_factor;
        }
        if !accepted {
            return Ok(FitResult {
                lambda,
                beta,
                objective: obj,
                residual: resid,
                iterations,
                converged: false,
            });
        }
        iterations += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Loss, Reg};

    fn scalar_data(vals: &[f64]) -> Dataset {
        Dataset::from_scalars(vals).unwrap()
    }

    #[test]
    fn lasso_1d_closed_form() {
        // z̄ > λ -> β̂ = z̄ - λ
        let data = scalar_data(&[2.0, 1.0, 3.0, 2.0]);
        let model = Model::new(Loss::squared(), Reg::L1);
        let cfg = SolverConfig::default();
        let fit = fit_erm(&model, &data, &Weights::full(4), Lambda::Finite(0.5), &cfg, None).unwrap();
        assert!(fit.converged);
        assert!((fit.beta[0] - 1.5).abs() < 1e-12, "{}", fit.beta[0]);
    }

    #[test]
    fn ridge_infinite_lambda() {
        let data = scalar_data(&[1.0, 2.0]);
        let model = Model::new(Loss::squared(), Reg::Ridge { scale: 1.0 });
        let fit = fit_erm(
            &model,
            &data,
            &Weights::full(2),
            Lambda::Infinite,
            &SolverConfig::default(),
            None,
        )
        .unwrap();
        assert_eq!(fit.beta[0], 0.0);
        assert!(fit.converged);
    }

    #[test]
    fn ridge_1d_closed_form_vs_grid_oracle() {
        // π = β²/2 -> β̂(λ) = z̄/(1+λ)
        let data = scalar_data(&[0.3, 1.2, -0.5, 0.9, 0.6]);
        let zbar: f64 = 0.5;
        let model = Model::new(Loss::squared(), Reg::Ridge { scale: 0.5 });
        let lam = 0.7;
        let fit = fit_erm(
            &model,
            &data,
            &Weights::full(5),
            Lambda::Finite(lam),
            &SolverConfig::default(),
            None,
        )
        .unwrap();
        let expect = zbar / (1.0 + lam);
        assert!((fit.beta[0] - expect).abs() < 1e-12);
        // dense grid oracle
        let mut best = (f64::INFINITY, 0.0);
        for k in 0..2_000_001 {
            let b = -1.0 + 2.0 * k as f64 / 2_000_000.0;
            let v = model.objective_value(
                &data,
                &Weights::full(5),
                &DVector::from_vec(vec![b]),
                lam,
            );
            if v < best.0 {
                best = (v, b);
            }
        }
        assert!((fit.beta[0] - best.1).abs() < 1e-6);
    }

    #[test]
    fn quadratic_fit_converges_in_one_newton_iteration() {
        let data = scalar_data(&[0.3, 1.2, -0.5]);
        let model = Model::new(Loss::squared(), Reg::Ridge { scale: 0.5 });
        let fit = fit_erm(
            &model,
            &data,
            &Weights::full(3),
            Lambda::Finite(0.2),
            &SolverConfig::default(),
            None,
        )
        .unwrap();
        assert_eq!(fit.iterations, 1);
        assert!(fit.converged);
    }

    #[test]
    fn fit_minimizes_against_random_perturbations() {
        use rand::prelude::*;
        use rand_chacha::ChaCha8Rng;
        let data = Dataset::from_rows(&[
            vec![0.5, 1.0, 1.0],
            vec![-0.2, 0.8, 0.0],
            vec![1.4, -0.6, 1.0],
            vec![0.1, 0.2, 0.0],
            vec![-1.0, 0.4, 1.0],
        ])
        .unwrap();
        let model = Model::new(Loss::logistic(), Reg::Ridge { scale: 1.0 });
        let w = Weights::full(5);
        let lam = 0.3;
        let fit = fit_erm(
            &model,
            &data,
            &w,
            Lambda::Finite(lam),
            &SolverConfig::default(),
            None,
        )
        .unwrap();
        assert!(fit.converged);
        let base = model.objective_value(&data, &w, &fit.beta, lam);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let u = DVector::from_fn(2, |_, _| rng.gen::<f64>() - 0.5).normalize();
            let cand = &fit.beta + u * 1e-3;
            assert!(model.objective_value(&data, &w, &cand, lam) >= base - 1e-12);
        }
    }

    #[test]
    fn generalized_prox_examples() {
        let model = Model::new(Loss::squared(), Reg::L1);
        let cfg = SolverConfig::default();
        // zero penalty returns v
        let h = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 1.0]));
        let v = DVector::from_vec(vec![0.4, -0.7]);
        let out = generalized_prox(&h, &v, &model, 0.0, &cfg).unwrap();
        assert!((out - &v).norm() < 1e-14);
        // identity metric soft threshold
        let h1 = DMatrix::identity(1, 1);
        let out = generalized_prox(&h1, &DVector::from_vec(vec![1.0]), &model, 0.3, &cfg).unwrap();
        assert!((out[0] - 0.7).abs() < 1e-14);
        let out = generalized_prox(&h1, &DVector::from_vec(vec![0.2]), &model, 0.3, &cfg).unwrap();
        assert_eq!(out[0], 0.0);
    }

    #[test]
    fn generalized_prox_dense_matches_grid_oracle() {
        let model = Model::new(Loss::squared(), Reg::L1);
        let cfg = SolverConfig::default();
        let h = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let v = DVector::from_vec(vec![0.83, -0.41]);
        let lam = 0.4;
        let got = generalized_prox(&h, &v, &model, lam, &cfg).unwrap();
        let mut best = (f64::INFINITY, DVector::zeros(2));
        let m = 1200;
        for a in 0..=m {
            for b in 0..=m {
                let x = DVector::from_vec(vec![
                    -1.2 + 2.4 * a as f64 / m as f64,
                    -1.2 + 2.4 * b as f64 / m as f64,
                ]);
                let r = &v - &x;
                let val = 0.5 * r.dot(&(&h * &r)) + lam * model.reg.value(&x);
                if val < best.0 {
                    best = (val, x);
                }
            }
        }
        assert!((got.clone() - &best.1).norm() < 1e-2);
        // tighter check: compare objective values
        let r = &v - &got;
        let got_val = 0.5 * r.dot(&(&h * &r)) + lam * model.reg.value(&got);
        assert!(got_val <= best.0 + 1e-6);
    }

    #[test]
    fn generalized_prox_rejects_non_pd() {
        let model = Model::new(Loss::squared(), Reg::L1);
        let h = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0]));
        let v = DVector::from_vec(vec![1.0, 1.0]);
        assert!(matches!(
            generalized_prox(&h, &v, &model, 0.1, &SolverConfig::default()),
            Err(Error::SingularMatrix { .. })
        ));
    }

    #[test]
    fn newton_and_prox_newton_steps() {
        // gradient 0 -> stationary
        let b0 = DVector::from_vec(vec![1.0, -2.0]);
        let h = DMatrix::identity(2, 2);
        let g = DVector::zeros(2);
        assert!((newton_step(&b0, &g, &h).unwrap() - &b0).norm() < 1e-15);

        // 1-D: β₀ = 1, g = 0.5, H = 2 -> 0.75
        let b0 = DVector::from_vec(vec![1.0]);
        let g = DVector::from_vec(vec![0.5]);
        let h = DMatrix::from_vec(1, 1, vec![2.0]);
        assert!((newton_step(&b0, &g, &h).unwrap()[0] - 0.75).abs() < 1e-15);

        // with λ = 0.6 the prox step soft-thresholds 0.75 at 0.3 -> 0.45
        let model = Model::new(Loss::squared(), Reg::L1);
        let out = prox_newton_step(&b0, &g, &h, &model, 0.6, &SolverConfig::default()).unwrap();
        assert!((out[0] - 0.45).abs() < 1e-14);

        // penalty ≡ 0 coincides with the Newton step
        let out = prox_newton_step(&b0, &g, &h, &model, 0.0, &SolverConfig::default()).unwrap();
        assert!((out[0] - 0.75).abs() < 1e-14);
    }

    #[test]
    fn ridge_path_norm_is_nonincreasing() {
        let data = scalar_data(&[0.4, 1.3, 0.8, -0.2]);
        let model = Model::new(Loss::squared(), Reg::Ridge { scale: 1.0 });
        let cfg = SolverConfig::default();
        let mut prev = f64::INFINITY;
        let mut warm = None;
        for k in 0..8 {
            let lam = 10f64.powi(k - 3);
            let fit = fit_erm(
                &model,
                &data,
                &Weights::full(4),
                Lambda::Finite(lam),
                &cfg,
                warm.as_ref(),
            )
            .unwrap();
            let norm = fit.beta.norm();
            assert!(norm <= prev + 1e-12);
            prev = norm;
            warm = Some(fit.beta);
        }
    }

    #[test]
    fn singular_hessian_is_reported() {
        let h = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0]));
        let g = DVector::from_vec(vec![1.0, 1.0]);
        let b0 = DVector::zeros(2);
        match newton_step(&b0, &g, &h) {
            Err(Error::SingularMatrix { min_eig, .. }) => assert!(min_eig.abs() < 1e-12),
            other => panic!("expected singular error, got {other:?}"),
        }
    }
}
