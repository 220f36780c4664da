//! Newton-step approximations to leave-one-out CV for smooth objectives:
//! plain, infinitesimal-jackknife, higher-order Taylor, and the
//! support-restricted non-smooth extensions.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::dataset::{Dataset, Lambda, Weights};
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{Link, Loss, Model, Reg};
use crate::solver::{FitResult, SolverConfig};

/// Which approximation produced an [`ApproxResult`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Method {
    Cv,
    Acv,
    AcvIj,
    AcvP { p: u32, regularized: bool },
    AcvSr,
    AcvIjSr,
    ProxAcv,
    ProxAcvIj,
    ProxAcvP { p: u32, regularized: bool },
}

impl Method {
    pub fn tag(&self) -> String {
        match self {
            Method::Cv => "cv".into(),
            Method::Acv => "acv".into(),
            Method::AcvIj => "acv_ij".into(),
            Method::AcvP { p, regularized } => {
                if *regularized {
                    format!("acv_p{p}")
                } else {
                    format!("acv_p{p}_ho")
                }
            }
            Method::AcvSr => "acv_sr".into(),
            Method::AcvIjSr => "acv_ij_sr".into(),
            Method::ProxAcv => "proxacv".into(),
            Method::ProxAcvIj => "proxacv_ij".into(),
            Method::ProxAcvP { p, regularized } => {
                if *regularized {
                    format!("proxacv_p{p}")
                } else {
                    format!("proxacv_p{p}_ho")
                }
            }
        }
    }
}

/// Approximate CV output: per-fold estimators and the averaged held-out loss.
#[derive(Debug, Clone)]
pub struct ApproxResult {
    pub lambda: Lambda,
    pub method: Method,
    pub estimators: Vec<DVector<f64>>,
    pub heldout: Vec<f64>,
    pub value: f64,
}

impl ApproxResult {
    fn assemble(
        model: &Model,
        data: &Dataset,
        lambda: Lambda,
        method: Method,
        estimators: Vec<DVector<f64>>,
    ) -> Self {
        let heldout: Vec<f64> = estimators
            .iter()
            .enumerate()
            .map(|(i, b)| model.heldout_loss(data, i, b))
            .collect();
        let value = heldout.iter().sum::<f64>() / heldout.len() as f64;
        Self {
            lambda,
            method,
            estimators,
            heldout,
            value,
        }
    }
}

fn require_smooth(model: &Model) -> Result<()> {
    if model.reg.smooth() {
        Ok(())
    } else {
        Err(Error::NonSmoothRegularizer)
    }
}

/// One Newton step per fold: `β̌_i = β̂ + H_m(P_{-i}, β̂, λ)⁻¹ ∇ℓ(z_i, β̂) / n`.
pub fn acv(model: &Model, data: &Dataset, lambda: f64, fit: &FitResult) -> Result<ApproxResult> {
    require_smooth(model)?;
    let n = data.n();
    let beta = &fit.beta;
    let w = Weights::full(n);
    let full_obj_hess = model.loss_hess(data, &w, beta) + model.reg.hess(beta)? * lambda;
    let estimators: Vec<DVector<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let hi = &full_obj_hess - model.loss.hess(data.point(i), beta) / n as f64;
            let gi = model.loss.grad(data.point(i), beta);
            Ok(beta + linalg::solve_spd(&hi, &gi, "acv per-fold Hessian")? / n as f64)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ApproxResult::assemble(
        model,
        data,
        Lambda::Finite(lambda),
        Method::Acv,
        estimators,
    ))
}

/// Infinitesimal-jackknife variant: one shared full-data Hessian, one
/// factorization.
pub fn acv_ij(model: &Model, data: &Dataset, lambda: f64, fit: &FitResult) -> Result<ApproxResult> {
    require_smooth(model)?;
    let n = data.n();
    let beta = &fit.beta;
    let w = Weights::full(n);
    let full_obj_hess = model.loss_hess(data, &w, beta) + model.reg.hess(beta)? * lambda;
    let chol = linalg::cholesky(&full_obj_hess, "acv_ij full-data Hessian")?;
    let estimators: Vec<DVector<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let gi = model.loss.grad(data.point(i), beta);
            beta + chol.solve(&gi) / n as f64
        })
        .collect();
    Ok(ApproxResult::assemble(
        model,
        data,
        Lambda::Finite(lambda),
        Method::AcvIj,
        estimators,
    ))
}

/// Lipschitz constant of `∇^p m(P_{-i}, ·, λ)`, i.e. `C_{ℓ,p+1} + λ C_{π,p+1}`,
/// derived analytically from the model (used by the regularized Taylor term).
fn taylor_lipschitz(model: &Model, data: &Dataset, lambda: f64, p: u32) -> Result<f64> {
    let n = data.n() as f64;
    let loss_part = match (&model.loss, p) {
        (Loss::Quadratic { .. }, _) => 0.0,
        (Loss::Glm { link: Link::Logistic }, 2) => {
            let s: f64 = (0..data.n())
                .map(|i| {
                    let z = data.point(i);
                    (0..z.len() - 1).map(|j| z[j] * z[j]).sum::<f64>().powf(1.5)
                })
                .sum();
            0.09622504486493764 * s / n
        }
        (Loss::Glm { link: Link::Logistic }, 3) => {
            let s: f64 = (0..data.n())
                .map(|i| {
                    let z = data.point(i);
                    (0..z.len() - 1).map(|j| z[j] * z[j]).sum::<f64>().powi(2)
                })
                .sum();
            0.125 * s / n
        }
        (Loss::Custom(c), 2) => c.hess_lipschitz.ok_or_else(|| {
            Error::BoundsNotEvaluable("custom loss needs hess_lipschitz for regularized Taylor".into())
        })?,
        (Loss::Custom(c), 3) => c.third_lipschitz.ok_or_else(|| {
            Error::BoundsNotEvaluable("custom loss needs third_lipschitz for regularized Taylor".into())
        })?,
        _ => {
            return Err(Error::BoundsNotEvaluable(format!(
                "no order-{} Lipschitz constant for this loss",
                p + 1
            )))
        }
    };
    let reg_part = match (&model.reg, p) {
        (Reg::Ridge { .. }, _) => 0.0,
        (Reg::ElasticNet { l1: 0.0, .. }, _) => 0.0,
        (Reg::PseudoHuber { delta }, 2) => 1.5 / delta * (0.8f64).powf(2.5),
        (Reg::PseudoHuber { delta }, 3) => 3.0 / (delta * delta),
        _ => {
            return Err(Error::BoundsNotEvaluable(
                "regularizer has no Lipschitz Taylor constant".into(),
            ))
        }
    };
    Ok(loss_part + lambda * reg_part)
}

struct TaylorModel<'a> {
    model: &'a Model,
    data: &'a Dataset,
    w: Weights,
    beta_hat: &'a DVector<f64>,
    lambda: f64,
    g0: DVector<f64>,
    h0: DMatrix<f64>,
    p: u32,
    /// `Lip/(p+1)` coefficient of `‖Δ‖^{p+1}`; 0 when unregularized.
    rho: f64,
}

impl TaylorModel<'_> {
    fn value(&self, delta: &DVector<f64>) -> Result<f64> {
        let mut v = self.g0.dot(delta) + 0.5 * delta.dot(&(&self.h0 * delta));
        if self.p >= 3 {
            let t_vv = self
                .model
                .loss_third_vv(self.data, &self.w, self.beta_hat, delta)?
                + self.model.reg.third_vv(self.beta_hat, delta)? * self.lambda;
            v += t_vv.dot(delta) / 6.0;
        }
        if self.rho > 0.0 {
            v += self.rho * delta.norm().powi(self.p as i32 + 1);
        }
        Ok(v)
    }

    fn grad(&self, delta: &DVector<f64>) -> Result<DVector<f64>> {
        let mut g = &self.g0 + &self.h0 * delta;
        if self.p >= 3 {
            let t_vv = self
                .model
                .loss_third_vv(self.data, &self.w, self.beta_hat, delta)?
                + self.model.reg.third_vv(self.beta_hat, delta)? * self.lambda;
            g += t_vv * 0.5;
        }
        if self.rho > 0.0 {
            let nd = delta.norm();
            if nd > 0.0 {
                g += delta * (self.rho * (self.p as f64 + 1.0) * nd.powi(self.p as i32 - 1));
            }
        }
        Ok(g)
    }

    fn hess(&self, delta: &DVector<f64>) -> Result<DMatrix<f64>> {
        let mut h = self.h0.clone();
        if self.p >= 3 {
            h += self
                .model
                .loss_third_mat(self.data, &self.w, self.beta_hat, delta)?
                + self.model.reg.third_mat(self.beta_hat, delta)? * self.lambda;
        }
        if self.rho > 0.0 {
            let nd = delta.norm();
            if nd > 0.0 {
                let c = self.rho * (self.p as f64 + 1.0);
                let d = delta.len();
                h += DMatrix::identity(d, d) * (c * nd.powi(self.p as i32 - 1));
                h += (delta * delta.transpose())
                    * (c * (self.p as f64 - 1.0) * nd.powi(self.p as i32 - 3));
            }
        }
        Ok(h)
    }
}

/// Minimize a Taylor model by damped Newton with a diagonal-shift safeguard.
fn minimize_taylor(tm: &TaylorModel<'_>, cfg: &SolverConfig) -> Result<DVector<f64>> {
    let d = tm.beta_hat.len();
    let mut delta = DVector::zeros(d);
    let tol = 1e-11;
    for _ in 0..cfg.max_iter {
        let g = tm.grad(&delta)?;
        if g.norm() <= tol {
            return Ok(delta);
        }
        let h = tm.hess(&delta)?;
        let mut shift = 0.0;
        let dir = loop {
            let mut hs = h.clone();
            if shift > 0.0 {
                for j in 0..d {
                    hs[(j, j)] += shift;
                }
            }
            match nalgebra::Cholesky::new(hs) {
                Some(ch) => break -ch.solve(&g),
                None => {
                    shift = if shift == 0.0 {
                        1e-10 * (1.0 + h.norm())
                    } else {
                        shift * 10.0
                    };
                    if shift > 1e12 {
                        return Err(Error::SingularMatrix {
                            context: "taylor model Hessian".into(),
                            min_eig: linalg::min_eigenvalue(&h),
                        });
                    }
                }
            }
        };
        let slope = g.dot(&dir);
        let v0 = tm.value(&delta)?;
        let mut t = 1.0;
        let mut moved = false;
        while t > 1e-14 {
            let cand = &delta + &dir * t;
            if tm.value(&cand)? <= v0 + cfg.ls_c * t * slope + 4.0 * f64::EPSILON * v0.abs() {
                delta = cand;
                moved = true;
                break;
            }
            t *= cfg.ls_factor;
        }
        if !moved {
            break;
        }
    }
    let res = tm.grad(&delta)?.norm();
    if res <= 1e-9 {
        Ok(delta)
    } else {
        Err(Error::NonConvergence {
            context: "taylor model Newton".into(),
            residual: res,
            iterations: cfg.max_iter,
        })
    }
}

/// Higher-order approximation: each estimator minimizes the p-th order Taylor
/// expansion of the leave-one-out objective about β̂(λ), optionally with the
/// `Lip/(p+1) ‖β - β̂‖^{p+1}` regularization term.
pub fn acv_p(
    model: &Model,
    data: &Dataset,
    lambda: f64,
    fit: &FitResult,
    p: u32,
    regularized: bool,
    cfg: &SolverConfig,
) -> Result<ApproxResult> {
    require_smooth(model)?;
    if p != 2 && p != 3 {
        return Err(Error::InvalidConfig(format!("acv_p requires p in {{2, 3}}, got {p}")));
    }
    let n = data.n();
    let beta = &fit.beta;
    let rho = if regularized {
        taylor_lipschitz(model, data, lambda, p)? / (p as f64 + 1.0)
    } else {
        0.0
    };
    let w_full = Weights::full(n);
    let full_grad = model.loss_grad(data, &w_full, beta);
    let full_hess = model.loss_hess(data, &w_full, beta);
    let reg_grad = model.reg.grad(beta)?;
    let reg_hess = model.reg.hess(beta)?;

    let estimators: Vec<DVector<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let w = Weights::leave_out(n, i);
            let g0 = &full_grad - model.loss.grad(data.point(i), beta) / n as f64
                + &reg_grad * lambda;
            let h0 = &full_hess - model.loss.hess(data.point(i), beta) / n as f64
                + &reg_hess * lambda;
            let tm = TaylorModel {
                model,
                data,
                w,
                beta_hat: beta,
                lambda,
                g0,
                h0,
                p,
                rho,
            };
            Ok(beta + minimize_taylor(&tm, cfg)?)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ApproxResult::assemble(
        model,
        data,
        Lambda::Finite(lambda),
        Method::AcvP { p, regularized },
        estimators,
    ))
}

/// Support of β̂ under the configured detection threshold.
pub fn support_of(beta: &DVector<f64>, eps: f64) -> Vec<usize> {
    (0..beta.len()).filter(|&j| beta[j].abs() > eps).collect()
}

/// Support-restricted Newton/IJ step for ℓ1 (and patched-Lasso) problems:
/// the step is computed on the nonzero coordinates of β̂ only, off-support
/// coordinates stay 0. An empty support yields all-zero estimators.
pub fn acv_support_restricted(
    model: &Model,
    data: &Dataset,
    lambda: f64,
    fit: &FitResult,
    ij: bool,
    cfg: &SolverConfig,
) -> Result<ApproxResult> {
    match &model.reg {
        Reg::L1 | Reg::ElasticNet { .. } | Reg::PatchedLasso { .. } => {}
        _ => {
            return Err(Error::InvalidConfig(
                "support restriction applies to l1-type regularizers".into(),
            ))
        }
    }
    let n = data.n();
    let beta = &fit.beta;
    let d = beta.len();
    let support = support_of(beta, cfg.support_eps);
    let method = if ij { Method::AcvIjSr } else { Method::AcvSr };

    if support.is_empty() {
        let zero = DVector::zeros(d);
        let estimators = vec![zero; n];
        return Ok(ApproxResult::assemble(
            model,
            data,
            Lambda::Finite(lambda),
            method,
            estimators,
        ));
    }

    let w_full = Weights::full(n);
    let mut base = model.loss_hess(data, &w_full, beta);
    if let Reg::PatchedLasso { .. } = &model.reg {
        base += model.reg.hess(beta)? * lambda;
    }
    let restrict_mat = |m: &DMatrix<f64>| -> DMatrix<f64> {
        DMatrix::from_fn(support.len(), support.len(), |a, b| m[(support[a], support[b])])
    };
    let restrict_vec = |v: &DVector<f64>| -> DVector<f64> {
        DVector::from_fn(support.len(), |a, _| v[support[a]])
    };
    let base_s = restrict_mat(&base);
    let shared_chol = if ij {
        Some(linalg::cholesky(&base_s, "restricted full-data Hessian")?)
    } else {
        None
    };

    let mut beta_s0 = DVector::zeros(support.len());
    for (a, &j) in support.iter().enumerate() {
        beta_s0[a] = beta[j];
    }

    let estimators: Vec<DVector<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let gi = restrict_vec(&model.loss.grad(data.point(i), beta));
            let step = match &shared_chol {
                Some(ch) => ch.solve(&gi),
                None => {
                    let hi = &base_s
                        - restrict_mat(&model.loss.hess(data.point(i), beta)) / n as f64;
                    linalg::solve_spd(&hi, &gi, "restricted per-fold Hessian")?
                }
            };
            let bs = &beta_s0 + step / n as f64;
            let mut full = DVector::zeros(d);
            for (a, &j) in support.iter().enumerate() {
                full[j] = bs[a];
            }
            Ok(full)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ApproxResult::assemble(
        model,
        data,
        Lambda::Finite(lambda),
        method,
        estimators,
    ))
}
