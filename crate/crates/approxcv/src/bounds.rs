//! Moment estimates, curvature ratios, the assessment/selection error bounds,
//! and assembly of machine-checkable certificates.

use std::collections::BTreeMap;

use nalgebra::DVector;
use serde::Serialize;

use crate::acv::{self, ApproxResult, Method};
use crate::cv::{exact_cv, CvResult, FoldScheme};
use crate::dataset::{Dataset, Lambda, Weights};
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{constants_with_fits, ConstantSet, Model};
use crate::proxacv;
use crate::solver::{fit_erm, prox_quadratic, FitResult, SolverConfig};

/// Absolute slack applied to every gap-vs-bound comparison.
pub const PASS_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentSource {
    /// Supremum over the finite λ grid actually used for assessment; this
    /// lower-bounds the true supremum but the gap checks use the same grid.
    GridSup,
    /// Closed-form sufficient bound built from the infinite-penalty estimator.
    Sufficient,
}

/// Estimate of `M_{s,r} = sup_λ (1/n) Σ_i Lip(∇ℓ(z_i,·))^s ‖∇ℓ(z_i, β̂(λ))‖^r`.
#[derive(Debug, Clone, Serialize)]
pub struct MomentEstimate {
    pub s: u32,
    pub r: u32,
    pub value: f64,
    pub source: MomentSource,
    pub lambda_grid: Vec<f64>,
}

/// Grid-supremum moment estimate from fits at every grid λ.
pub fn moment_bound(
    model: &Model,
    data: &Dataset,
    s: u32,
    r: u32,
    grid: &[f64],
    fits: &[FitResult],
    constants: &ConstantSet,
) -> Result<MomentEstimate> {
    assert_eq!(grid.len(), fits.len());
    let n = data.n();
    let l_i = if s > 0 {
        Some(constants.l_i.as_ref().ok_or_else(|| Error::MissingMoment {
            s,
            r,
            needed_by: "per-point Lipschitz constants unavailable for this loss".into(),
        })?)
    } else {
        None
    };
    let mut sup = 0.0f64;
    for fit in fits {
        let mut acc = 0.0;
        for i in 0..n {
            let gn = model.loss.grad(data.point(i), &fit.beta).norm();
            let lp = match l_i {
                Some(l) => l[i].powi(s as i32),
                None => 1.0,
            };
            acc += lp * gn.powi(r as i32);
        }
        sup = sup.max(acc / n as f64);
    }
    Ok(MomentEstimate {
        s,
        r,
        value: sup,
        source: MomentSource::GridSup,
        lambda_grid: grid.to_vec(),
    })
}

/// Closed-form sufficient bound
/// `M_{s,r} ≤ (1/n) Σ_i L_i^s (‖∇ℓ(z_i, β̂(∞))‖ + ((n-1)/n)(L_i/c_m)‖∇ℓ(P̂, β̂(∞))‖)^r`,
/// valid for all λ simultaneously.
pub fn moment_bound_sufficient(
    model: &Model,
    data: &Dataset,
    s: u32,
    r: u32,
    constants: &ConstantSet,
) -> Result<MomentEstimate> {
    let n = data.n();
    if constants.c_m <= 0.0 {
        return Err(Error::BadConstants("c_m must be positive".into()));
    }
    let l_i = constants.l_i.as_ref().ok_or_else(|| Error::MissingMoment {
        s,
        r,
        needed_by: "sufficient moment bound".into(),
    })?;
    let beta_inf = model.reg.argmin(model.param_dim(data));
    let full_grad_norm = model.loss_grad(data, &Weights::full(n), &beta_inf).norm();
    let mut acc = 0.0;
    for i in 0..n {
        let gn = model.loss.grad(data.point(i), &beta_inf).norm();
        let base = gn + (n as f64 - 1.0) / n as f64 * l_i[i] / constants.c_m * full_grad_norm;
        acc += l_i[i].powi(s as i32) * base.powi(r as i32);
    }
    Ok(MomentEstimate {
        s,
        r,
        value: acc / n as f64,
        source: MomentSource::Sufficient,
        lambda_grid: Vec::new(),
    })
}

fn smoothness_constants(cs: &ConstantSet, p: u32) -> Result<(f64, f64)> {
    let pick = |l: Option<f64>, pi: Option<f64>| -> Result<(f64, f64)> {
        match (l, pi) {
            (Some(a), Some(b)) => Ok((a, b)),
            _ => Err(Error::BoundsNotEvaluable(format!(
                "order-{} smoothness constants unavailable",
                p + 1
            ))),
        }
    };
    match p {
        1 => pick(cs.c_ell_2, cs.c_pi_2),
        2 => pick(cs.c_ell_3, cs.c_pi_3),
        3 => pick(cs.c_ell_4, cs.c_pi_4),
        _ => Err(Error::BoundsNotEvaluable(format!("no constants for p = {p}"))),
    }
}

fn factorial(p: u32) -> f64 {
    (1..=p).map(|k| k as f64).product::<f64>().max(1.0)
}

/// Per-λ curvature ratio `κ_{p,λ'}^{λ} = (C_{ℓ,p+1} + λ' C_{π,p+1}) /
/// (p! (c_ℓ + λ' c_π 1{λ ≥ λ_π}))`.
pub fn kappa_ratio(p: u32, cs: &ConstantSet, lambda_prime: f64, lambda_ind: f64) -> Result<f64> {
    let (cl, cp) = smoothness_constants(cs, p)?;
    let denom = factorial(p) * cs.c_cross(lambda_prime, lambda_ind);
    if denom <= 0.0 {
        return Err(Error::BadConstants(format!(
            "kappa_{p} denominator nonpositive at λ' = {lambda_prime}"
        )));
    }
    Ok((cl + lambda_prime * cp) / denom)
}

/// `κ_p = sup_λ (C_{ℓ,p+1} + λ C_{π,p+1}) / (p!(c_ℓ + λ c_π 1{λ ≥ λ_π}))`.
///
/// The ratio is monotone between breakpoints, so the supremum over `[0, ∞)`
/// is attained among: the grid points, 0, both sides of `λ_π`, and the
/// `λ → ∞` limit.
pub fn kappa(p: u32, cs: &ConstantSet, grid: &[f64]) -> Result<f64> {
    let (cl, cp) = smoothness_constants(cs, p)?;
    let pf = factorial(p);
    let mut sup = 0.0f64;
    let mut eval = |lam: f64, indicator_on: bool| -> Result<()> {
        let denom = pf * (cs.c_ell + if indicator_on { lam * cs.c_pi } else { 0.0 });
        if denom <= 0.0 {
            return Err(Error::BadConstants(format!(
                "kappa_{p}: zero curvature at λ = {lam}"
            )));
        }
        sup = sup.max((cl + lam * cp) / denom);
        Ok(())
    };
    eval(0.0, 0.0 >= cs.lambda_pi)?;
    eval(cs.lambda_pi, false)?; // left limit at the threshold
    eval(cs.lambda_pi, true)?;
    for &lam in grid {
        eval(lam, lam >= cs.lambda_pi)?;
    }
    // λ -> ∞ limit
    if cp > 0.0 {
        if cs.c_pi > 0.0 {
            sup = sup.max(cp / (pf * cs.c_pi));
        } else {
            return Err(Error::BadConstants(format!(
                "kappa_{p} diverges: C_pi > 0 with c_pi = 0"
            )));
        }
    }
    Ok(sup)
}

/// Which assessment theorem to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum AssessmentKind {
    /// `|ACV - CV|`
    Thm1,
    /// `|ACV-IJ - ACV|`
    Thm2,
    /// `|ACV_p - CV|` (regularized Taylor model) or the plain higher-order
    /// variant when `regularized` is false.
    Thm3 { p: u32, regularized: bool },
    /// `|ProxACV - CV|`
    Thm6,
    /// `|ProxACV - ProxACV-IJ|`
    Thm7,
}

impl AssessmentKind {
    pub fn tag(&self) -> String {
        match self {
            AssessmentKind::Thm1 => "thm1".into(),
            AssessmentKind::Thm2 => "thm2".into(),
            AssessmentKind::Thm3 { p, regularized } => {
                if *regularized {
                    format!("thm3_p{p}")
                } else {
                    format!("thm3_p{p}_ho")
                }
            }
            AssessmentKind::Thm6 => "thm6".into(),
            AssessmentKind::Thm7 => "thm7".into(),
        }
    }

    /// Moments `(s, r)` required by this theorem.
    pub fn required_moments(&self) -> Vec<(u32, u32)> {
        match self {
            AssessmentKind::Thm1 | AssessmentKind::Thm6 => vec![(0, 3), (1, 3), (1, 4)],
            AssessmentKind::Thm2 | AssessmentKind::Thm7 => vec![(1, 2), (2, 2), (3, 2)],
            AssessmentKind::Thm3 { p, .. } => vec![(0, p + 1), (1, p + 1), (1, 2 * p)],
        }
    }
}

/// Moment table keyed by `(s, r)`.
pub type Moments = BTreeMap<(u32, u32), MomentEstimate>;

fn get_moment(moments: &Moments, s: u32, r: u32, needed_by: &str) -> Result<f64> {
    moments
        .get(&(s, r))
        .map(|m| m.value)
        .ok_or_else(|| Error::MissingMoment {
            s,
            r,
            needed_by: needed_by.into(),
        })
}

/// Evaluate an assessment bound at sample size `n` and penalty `lambda`.
pub fn assessment_bound(
    kind: AssessmentKind,
    cs: &ConstantSet,
    moments: &Moments,
    grid: &[f64],
    n: usize,
    lambda: f64,
) -> Result<f64> {
    if cs.c_m <= 0.0 {
        return Err(Error::BadConstants(
            "c_m must be positive to evaluate bounds".into(),
        ));
    }
    let nf = n as f64;
    match kind {
        AssessmentKind::Thm1 => {
            let k2 = kappa(2, cs, grid)?;
            let c = cs.c_m;
            let m03 = get_moment(moments, 0, 3, "thm1")?;
            let m13 = get_moment(moments, 1, 3, "thm1")?;
            let m14 = get_moment(moments, 1, 4, "thm1")?;
            Ok(k2 / nf.powi(2) * m03 / c.powi(2)
                + k2 / nf.powi(3) * m13 / c.powi(3)
                + k2 * k2 / nf.powi(4) * m14 / (2.0 * c.powi(4)))
        }
        AssessmentKind::Thm2 => {
            let c = cs.c_lambda(lambda);
            if c <= 0.0 {
                return Err(Error::BadConstants("c_{λ,λ} must be positive".into()));
            }
            let m12 = get_moment(moments, 1, 2, "thm2")?;
            let m22 = get_moment(moments, 2, 2, "thm2")?;
            let m32 = get_moment(moments, 3, 2, "thm2")?;
            Ok(m12 / (c * c * nf * nf)
                + m22 / (c.powi(3) * nf.powi(3))
                + m32 / (2.0 * c.powi(4) * nf.powi(4)))
        }
        AssessmentKind::Thm3 { p, regularized } => {
            let kp = kappa(p, cs, grid)?;
            let kfac = if regularized { 2.0 * kp } else { kp };
            let c = cs.c_lambda(lambda);
            if c <= 0.0 {
                return Err(Error::BadConstants("c_{λ,λ} must be positive".into()));
            }
            let m0 = get_moment(moments, 0, p + 1, "thm3")?;
            let m1 = get_moment(moments, 1, p + 1, "thm3")?;
            let m2 = get_moment(moments, 1, 2 * p, "thm3")?;
            let pi = p as i32;
            Ok(kfac * m0 / (nf.powi(pi) * c.powi(pi))
                + kfac * m1 / (nf.powi(pi + 1) * c.powi(pi + 1))
                + kfac * kfac * m2 / (2.0 * nf.powi(2 * pi) * c.powi(2 * pi)))
        }
        AssessmentKind::Thm6 => {
            let c = cs.c_m;
            let cl3 = cs
                .c_ell_3
                .ok_or_else(|| Error::BoundsNotEvaluable("thm6 needs the loss Hessian Lipschitz constant".into()))?;
            let m03 = get_moment(moments, 0, 3, "thm6")?;
            let m13 = get_moment(moments, 1, 3, "thm6")?;
            let m14 = get_moment(moments, 1, 4, "thm6")?;
            Ok(cl3 / nf.powi(2)
                * (m03 / (2.0 * c.powi(3))
                    + m13 / (2.0 * nf * c.powi(4))
                    + cl3 * m14 / (8.0 * nf * nf * c.powi(6))))
        }
        AssessmentKind::Thm7 => {
            let c = cs.c_m;
            let m12 = get_moment(moments, 1, 2, "thm7")?;
            let m22 = get_moment(moments, 2, 2, "thm7")?;
            let m32 = get_moment(moments, 3, 2, "thm7")?;
            Ok(m12 / (nf * nf * c * c)
                + m22 / (nf.powi(3) * c.powi(3))
                + m32 / (2.0 * nf.powi(4) * c.powi(4)))
        }
    }
}

/// The `A''` constant: twice the n²-scaled Thm 1 expression.
pub fn a_double_prime(cs: &ConstantSet, moments: &Moments, grid: &[f64], n: usize) -> Result<f64> {
    let k2 = kappa(2, cs, grid)?;
    let c = cs.c_m;
    let nf = n as f64;
    let m03 = get_moment(moments, 0, 3, "A''")?;
    let m13 = get_moment(moments, 1, 3, "A''")?;
    let m14 = get_moment(moments, 1, 4, "A''")?;
    Ok(2.0
        * (k2 * m03 / c.powi(2)
            + k2 / nf * m13 / c.powi(3)
            + k2 * k2 / (nf * nf) * m14 / (2.0 * c.powi(4))))
}

/// The `Ã` constant of the proximal selection bound.
pub fn a_tilde(cs: &ConstantSet, moments: &Moments, n: usize) -> Result<f64> {
    let c = cs.c_m;
    let nf = n as f64;
    let cl3 = cs
        .c_ell_3
        .ok_or_else(|| Error::BoundsNotEvaluable("Ã needs the loss Hessian Lipschitz constant".into()))?;
    let m03 = get_moment(moments, 0, 3, "Ã")?;
    let m13 = get_moment(moments, 1, 3, "Ã")?;
    let m14 = get_moment(moments, 1, 4, "Ã")?;
    Ok(cl3 / (nf * nf)
        * (m03 / c.powi(3) + m13 / (nf * c.powi(4)) + cl3 * m14 / (4.0 * nf * nf * c.powi(6))))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SelectionKind {
    /// Weak bound on `‖β̂(λ_ACV) - β̂(λ_CV)‖²` (or the two-λ form with ΔACV).
    Thm4,
    /// Strong bound on `|‖β̂(λ) - β̂(λ')‖ - A/(n c_m)|²`.
    Thm5,
    /// Proximal bound on `‖β̂(λ_ProxACV) - β̂(λ_CV)‖²`.
    Thm8,
}

/// Evaluated selection bound with its intermediate constants.
#[derive(Debug, Clone, Serialize)]
pub struct SelectionBound {
    pub kind: SelectionKind,
    /// Bound on the squared distance (Thm4/Thm8) or on the squared deviation
    /// from `center` (Thm5).
    pub bound: f64,
    /// `A/(n c_m)` for Thm5, 0 otherwise.
    pub center: f64,
    pub a: Option<f64>,
    pub a_prime: Option<f64>,
    pub a_double_prime: Option<f64>,
    pub a_tilde: Option<f64>,
    /// Tightened per-λ-ratio variant of the Thm5 bound, when a (λ, λ') pair
    /// is supplied: `(center, bound)`.
    pub per_lambda: Option<(f64, f64)>,
}

/// Evaluate a selection bound.
///
/// `delta` is the assessment-curve difference `ACV(λ) - ACV(λ')` (or the
/// ProxACV analogue) for the two-λ forms; `None` selects the argmin form.
/// `lambdas = (λ, λ')` with `λ > λ'` additionally evaluates the per-λ-ratio
/// variant of Thm5.
pub fn selection_bound(
    kind: SelectionKind,
    cs: &ConstantSet,
    moments: &Moments,
    grid: &[f64],
    n: usize,
    delta: Option<f64>,
    lambdas: Option<(f64, f64)>,
) -> Result<SelectionBound> {
    if cs.c_m <= 0.0 {
        return Err(Error::BadConstants(
            "c_m must be positive to evaluate bounds".into(),
        ));
    }
    let nf = n as f64;
    let c = cs.c_m;
    match kind {
        SelectionKind::Thm4 => {
            if cs.c_ell <= 0.0 {
                return Err(Error::BadConstants("thm4 needs c_ℓ > 0".into()));
            }
            let m02 = get_moment(moments, 0, 2, "thm4")?;
            let m12 = get_moment(moments, 1, 2, "thm4")?;
            let app = a_double_prime(cs, moments, grid, n)?;
            let bound = match delta {
                None => {
                    (8.0 / c)
                        * (m02 / (cs.c_ell * nf) + (app * c * c + m12) / (4.0 * c * c * nf * nf))
                }
                Some(d) => (2.0 / c) * (4.0 * m02 / (cs.c_ell * nf) + d + m12 / (nf * nf * c * c)),
            };
            Ok(SelectionBound {
                kind,
                bound,
                center: 0.0,
                a: None,
                a_prime: None,
                a_double_prime: Some(app),
                a_tilde: None,
                per_lambda: None,
            })
        }
        SelectionKind::Thm5 => {
            let g0 = match cs.grad_reg_at_est0 {
                Some(g) if g > 0.0 => g,
                _ => {
                    return Err(Error::BadConstants(
                        "thm5 requires ‖∇π(β̂(0))‖ > 0".into(),
                    ))
                }
            };
            if cs.c_ell <= 0.0 {
                return Err(Error::BadConstants("thm5 needs c_ℓ > 0".into()));
            }
            let c_pi_2 = cs
                .c_pi_2
                .ok_or_else(|| Error::BoundsNotEvaluable("thm5 needs the penalty Hessian bound".into()))?;
            let m11 = get_moment(moments, 1, 1, "thm5")?;
            let m02 = get_moment(moments, 0, 2, "thm5")?;
            let m12 = get_moment(moments, 1, 2, "thm5")?;
            let k1 = kappa(1, cs, grid)?;
            let k2 = kappa(2, cs, grid)?;
            let app = a_double_prime(cs, moments, grid, n)?;
            let a = (m11 + m02 * k2) / (cs.c_ell / 2.0) + m02 * c_pi_2 * k1 * k1 / (g0 * c);
            let a_prime = m12 / (c * c);
            let bound = match delta {
                None => (a * a + 2.0 * c * a_prime + 2.0 * c * app) / (nf * nf * c * c),
                Some(dd) => (a * a + 2.0 * c * a_prime) / (nf * nf * c * c) + 2.0 * dd / c,
            };
            let per_lambda = match lambdas {
                Some((lam, lam_p)) if lam > lam_p => {
                    let c1 = 2.0 / c * ((lam - lam_p) / (lam + lam_p)) * ((nf - 1.0) / nf);
                    let k2_lp = kappa_ratio(2, cs, lam_p, lam_p)?;
                    let k1_l = kappa_ratio(1, cs, lam, lam)?;
                    let k1_lp_l = kappa_ratio(1, cs, lam_p, lam)?;
                    let c2 = 2.0 * m11 / cs.c_cross(lam, lam)
                        + 2.0 * m02 * k2_lp / cs.c_cross(lam_p, lam)
                        + (nf - 1.0) / nf * m02 * c_pi_2 * k1_l * k1_lp_l / (g0 * c);
                    let c3 = m12 / (c * c);
                    let center = c1 * c2 / (2.0 * nf);
                    // without an observed Δ the bound uses the A''/n² envelope
                    let dd = delta.unwrap_or(app / (nf * nf));
                    let bound_pl =
                        c1 * c1 * c2 * c2 / (4.0 * nf * nf) + c1 * dd + c1 * c3 / (nf * nf);
                    Some((center, bound_pl))
                }
                _ => None,
            };
            Ok(SelectionBound {
                kind,
                bound,
                center: a / (nf * c),
                a: Some(a),
                a_prime: Some(a_prime),
                a_double_prime: Some(app),
                a_tilde: None,
                per_lambda,
            })
        }
        SelectionKind::Thm8 => {
            let m02 = get_moment(moments, 0, 2, "thm8")?;
            let m12 = get_moment(moments, 1, 2, "thm8")?;
            let at = a_tilde(cs, moments, n)?;
            let bound = match delta {
                None => (2.0 / (nf * c)) * (4.0 * m02 / c + m12 / (nf * c * c) + at),
                Some(dd) => (2.0 / c) * (4.0 * m02 / (nf * c) + m12 / (nf * nf * c * c) + dd),
            };
            Ok(SelectionBound {
                kind,
                bound,
                center: 0.0,
                a: None,
                a_prime: None,
                a_double_prime: None,
                a_tilde: Some(at),
                per_lambda: None,
            })
        }
    }
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

// ---------------------------------------------------------------------------
// Certificates
// ---------------------------------------------------------------------------

/// One gap-vs-bound row of a certificate.
#[derive(Debug, Clone, Serialize)]
pub struct CertRow {
    pub lambda: f64,
    pub method: String,
    /// Assessment value of the method at this λ.
    pub value: f64,
    /// What the gap is measured against ("cv", "acv", "proxacv").
    pub reference: String,
    pub gap: f64,
    pub bound_kind: Option<String>,
    pub bound: Option<f64>,
    /// `gap <= bound + slack`; None when no bound applies.
    pub pass: Option<bool>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SelectionRecord {
    pub lambda_cv: f64,
    pub lambda_acv: Option<f64>,
    pub lambda_proxacv: Option<f64>,
    pub delta_acv: Option<f64>,
    pub delta_proxacv: Option<f64>,
    /// `‖β̂(λ_ACV) - β̂(λ_CV)‖`.
    pub dist_acv: Option<f64>,
    pub dist_proxacv: Option<f64>,
    pub thm4: Option<SelectionBound>,
    pub thm4_pass: Option<bool>,
    pub thm5: Option<SelectionBound>,
    pub thm5_pass: Option<bool>,
    pub thm8: Option<SelectionBound>,
    pub thm8_pass: Option<bool>,
}

/// Worst observed `LHS - RHS` over all folds and grid λ of the estimator-level
/// inequalities (all must be ≤ 0 up to slack).
#[derive(Debug, Clone, Serialize)]
pub struct EstimatorChecks {
    /// `‖β̂ - β̃_i‖ - ‖∇ℓ(z_i, β̂)‖/(n c_m)`.
    pub proximity_max: Option<f64>,
    /// `‖β̌_i - β̃_i‖ - κ₂‖∇ℓ(z_i, β̂)‖²/(c_m² n²)`.
    pub acv_cv_max: Option<f64>,
    /// `‖β̌ᴵᴶ_i - β̌_i‖ - ‖∇²ℓ(z_i,β̂)‖‖∇ℓ(z_i,β̂)‖/(c_{λ,λ}² n²)`.
    pub ij_acv_max: Option<f64>,
    /// Same for the proximal pair, with `c_m`.
    pub prox_ij_max: Option<f64>,
    /// `‖β̌ᵖʳᵒˣ_i - β̂‖ - ‖∇ℓ(z_i, β̂)‖/(n c_m)`.
    pub prox_proximity_max: Option<f64>,
    /// Max residual of `β̂ = prox_{λπ}^{H_{ℓ,i}}(β̂ - H_{ℓ,i}⁻¹∇ℓ(P̂, β̂))`.
    pub prox_fixed_point_max: Option<f64>,
    pub pass: bool,
}

/// Full assessment/selection certificate for one instance.
#[derive(Debug, Clone, Serialize)]
pub struct BoundCertificate {
    pub certificate_version: u32,
    pub instance: String,
    pub n: usize,
    pub d: usize,
    pub lambda_grid: Vec<f64>,
    pub methods: Vec<String>,
    pub constants: ConstantSet,
    pub kappa1: Option<f64>,
    pub kappa2: Option<f64>,
    pub kappa3: Option<f64>,
    pub moments: Vec<MomentEstimate>,
    pub rows: Vec<CertRow>,
    pub selection: Option<SelectionRecord>,
    pub estimator_checks: Option<EstimatorChecks>,
    pub pass: bool,
}

impl BoundCertificate {
    /// Flat CSV view: `lambda,method,gap,bound,pass`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("lambda,method,gap,bound,pass\n");
        for row in &self.rows {
            let bound = row.bound.map(|b| format!("{b}")).unwrap_or_default();
            let pass = row.pass.map(|p| p.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                row.lambda, row.method, row.gap, bound, pass
            ));
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Smallest λ among grid minimizers of `values` (grid sorted ascending).
pub fn grid_argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for k in 1..values.len() {
        if values[k] < values[best] {
            best = k;
        }
    }
    best
}

/// Everything a sweep computes per λ, exposed for report writers.
#[derive(Debug)]
pub struct SweepData {
    pub grid: Vec<f64>,
    pub fits: Vec<FitResult>,
    pub cv: Vec<CvResult>,
    /// method tag -> per-λ results
    pub approx: BTreeMap<String, Vec<ApproxResult>>,
}

/// Run every requested method over the grid (one fit per λ, warm-started
/// along the grid; exact CV is always computed as the gap reference).
pub fn run_sweep_methods(
    model: &Model,
    data: &Dataset,
    grid: &[f64],
    methods: &[Method],
    scheme: &FoldScheme,
    cfg: &SolverConfig,
) -> Result<SweepData> {
    let n = data.n();
    let mut fits = Vec::with_capacity(grid.len());
    let mut warm: Option<DVector<f64>> = None;
    for &lam in grid {
        let fit = fit_erm(
            model,
            data,
            &Weights::full(n),
            Lambda::Finite(lam),
            cfg,
            if cfg.warm_start { warm.as_ref() } else { None },
        )?;
        warm = Some(fit.beta.clone());
        fits.push(fit);
    }

    let mut cv = Vec::with_capacity(grid.len());
    for (k, &lam) in grid.iter().enumerate() {
        cv.push(exact_cv(
            model,
            data,
            Lambda::Finite(lam),
            scheme,
            cfg,
            Some(&fits[k]),
        )?);
    }

    let mut approx: BTreeMap<String, Vec<ApproxResult>> = BTreeMap::new();
    for method in methods {
        if matches!(method, Method::Cv) {
            continue;
        }
        let mut per_lambda = Vec::with_capacity(grid.len());
        for (k, &lam) in grid.iter().enumerate() {
            let fit = &fits[k];
            let res = match method {
                Method::Acv => acv::acv(model, data, lam, fit)?,
                Method::AcvIj => acv::acv_ij(model, data, lam, fit)?,
                Method::AcvP { p, regularized } => {
                    acv::acv_p(model, data, lam, fit, *p, *regularized, cfg)?
                }
                Method::AcvSr => acv::acv_support_restricted(model, data, lam, fit, false, cfg)?,
                Method::AcvIjSr => acv::acv_support_restricted(model, data, lam, fit, true, cfg)?,
                Method::ProxAcv => proxacv::proxacv(model, data, lam, fit, cfg)?,
                Method::ProxAcvIj => proxacv::proxacv_ij(model, data, lam, fit, cfg)?,
                Method::ProxAcvP { p, regularized } => {
                    proxacv::proxacv_p(model, data, lam, fit, *p, *regularized, cfg)?
                }
                Method::Cv => unreachable!(),
            };
            per_lambda.push(res);
        }
        approx.insert(method.tag(), per_lambda);
    }

    Ok(SweepData {
        grid: grid.to_vec(),
        fits,
        cv,
        approx,
    })
}

/// Compose fits, exact CV, the requested approximations, moment estimates and
/// theorem bounds into a certificate. Deterministic given its inputs.
pub fn certify(
    model: &Model,
    data: &Dataset,
    grid: &[f64],
    methods: &[Method],
    scheme: &FoldScheme,
    cfg: &SolverConfig,
    instance: &str,
) -> Result<BoundCertificate> {
    if grid.is_empty() {
        return Err(Error::InvalidConfig("empty λ grid".into()));
    }
    if grid.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidConfig("λ grid must be sorted ascending".into()));
    }
    let n = data.n();
    let d = model.param_dim(data);
    let sweep = run_sweep_methods(model, data, grid, methods, scheme, cfg)?;
    let constants = constants_with_fits(model, data, grid, &sweep.fits, cfg)?;
    let evaluable = constants.bounds_evaluable();

    // Moment table: everything any requested bound might need.
    let mut needed: Vec<(u32, u32)> = vec![
        (0, 2),
        (1, 1),
        (1, 2),
        (0, 3),
        (1, 3),
        (1, 4),
        (2, 2),
        (3, 2),
    ];
    for m in methods {
        if let Method::AcvP { p, .. } | Method::ProxAcvP { p, .. } = m {
            needed.extend([(0, p + 1), (1, p + 1), (1, 2 * p)]);
        }
    }
    needed.sort_unstable();
    needed.dedup();
    let mut moments: Moments = BTreeMap::new();
    if evaluable {
        for &(s, r) in &needed {
            if s > 0 && constants.l_i.is_none() {
                continue;
            }
            let m = moment_bound(model, data, s, r, grid, &sweep.fits, &constants)?;
            moments.insert((s, r), m);
        }
    }

    let kappa1 = kappa(1, &constants, grid).ok();
    let kappa2 = kappa(2, &constants, grid).ok();
    let kappa3 = kappa(3, &constants, grid).ok();

    // Per-λ gap-vs-bound rows.
    let mut rows: Vec<CertRow> = Vec::new();
    let cv_values: Vec<f64> = sweep.cv.iter().map(|c| c.cv_value).collect();
    for (k, &lam) in grid.iter().enumerate() {
        rows.push(CertRow {
            lambda: lam,
            method: "cv".into(),
            value: cv_values[k],
            reference: String::new(),
            gap: 0.0,
            bound_kind: None,
            bound: None,
            pass: None,
        });
        for (tag, results) in &sweep.approx {
            let value = results[k].value;
            let (reference, ref_value, bound_kind) = match results[k].method {
                Method::Acv => ("cv", cv_values[k], Some(AssessmentKind::Thm1)),
                Method::AcvIj => match sweep.approx.get("acv").map(|r| r[k].value) {
                    Some(v) => ("acv", v, Some(AssessmentKind::Thm2)),
                    None => ("cv", cv_values[k], None),
                },
                Method::AcvP { p, regularized } => (
                    "cv",
                    cv_values[k],
                    Some(AssessmentKind::Thm3 { p, regularized }),
                ),
                Method::ProxAcv => ("cv", cv_values[k], Some(AssessmentKind::Thm6)),
                Method::ProxAcvIj => match sweep.approx.get("proxacv").map(|r| r[k].value) {
                    Some(v) => ("proxacv", v, Some(AssessmentKind::Thm7)),
                    None => ("cv", cv_values[k], None),
                },
                Method::AcvSr | Method::AcvIjSr | Method::ProxAcvP { .. } => {
                    ("cv", cv_values[k], None)
                }
                Method::Cv => continue,
            };
            let gap = (value - ref_value).abs();
            let (bound_kind_tag, bound, pass) = match bound_kind {
                Some(kind) if evaluable => {
                    match assessment_bound(kind, &constants, &moments, grid, n, lam) {
                        Ok(b) => (Some(kind.tag()), Some(b), Some(gap <= b + PASS_SLACK)),
                        Err(_) => (None, None, None),
                    }
                }
                _ => (None, None, None),
            };
            rows.push(CertRow {
                lambda: lam,
                method: tag.clone(),
                value,
                reference: reference.into(),
                gap,
                bound_kind: bound_kind_tag,
                bound,
                pass,
            });
        }
    }

    // Selection comparison (smallest λ among grid minimizers).
    let k_cv = grid_argmin(&cv_values);
    let acv_curve: Option<Vec<f64>> = sweep
        .approx
        .get("acv")
        .map(|r| r.iter().map(|a| a.value).collect());
    let prox_curve: Option<Vec<f64>> = sweep
        .approx
        .get("proxacv")
        .map(|r| r.iter().map(|a| a.value).collect());
    let mut selection = None;
    if acv_curve.is_some() || prox_curve.is_some() {
        let mut rec = SelectionRecord {
            lambda_cv: grid[k_cv],
            lambda_acv: None,
            lambda_proxacv: None,
            delta_acv: None,
            delta_proxacv: None,
            dist_acv: None,
            dist_proxacv: None,
            thm4: None,
            thm4_pass: None,
            thm5: None,
            thm5_pass: None,
            thm8: None,
            thm8_pass: None,
        };
        if let Some(curve) = &acv_curve {
            let k_a = grid_argmin(curve);
            rec.lambda_acv = Some(grid[k_a]);
            rec.delta_acv = Some(curve[k_cv] - curve[k_a]);
            let dist = (&sweep.fits[k_a].beta - &sweep.fits[k_cv].beta).norm();
            rec.dist_acv = Some(dist);
            if evaluable {
                if let Ok(b) =
                    selection_bound(SelectionKind::Thm4, &constants, &moments, grid, n, None, None)
                {
                    rec.thm4_pass = Some(dist * dist <= b.bound + PASS_SLACK);
                    rec.thm4 = Some(b);
                }
                let (hi, lo) = if grid[k_a] > grid[k_cv] {
                    (grid[k_a], grid[k_cv])
                } else {
                    (grid[k_cv], grid[k_a])
                };
                let lambdas = if hi > lo { Some((hi, lo)) } else { None };
                if let Ok(b) = selection_bound(
                    SelectionKind::Thm5,
                    &constants,
                    &moments,
                    grid,
                    n,
                    None,
                    lambdas,
                ) {
                    let dev = (dist - b.center).powi(2);
                    rec.thm5_pass = Some(dev <= b.bound + PASS_SLACK);
                    rec.thm5 = Some(b);
                }
            }
        }
        if let Some(curve) = &prox_curve {
            let k_p = grid_argmin(curve);
            rec.lambda_proxacv = Some(grid[k_p]);
            rec.delta_proxacv = Some(curve[k_cv] - curve[k_p]);
            let dist = (&sweep.fits[k_p].beta - &sweep.fits[k_cv].beta).norm();
            rec.dist_proxacv = Some(dist);
            if evaluable {
                if let Ok(b) =
                    selection_bound(SelectionKind::Thm8, &constants, &moments, grid, n, None, None)
                {
                    rec.thm8_pass = Some(dist * dist <= b.bound + PASS_SLACK);
                    rec.thm8 = Some(b);
                }
            }
        }
        selection = Some(rec);
    }

    // Estimator-level inequality checks over every fold and λ.
    let estimator_checks = if evaluable {
        Some(estimator_level_checks(
            model, data, &sweep, &constants, kappa2, cfg,
        )?)
    } else {
        None
    };

    let rows_pass = rows.iter().all(|r| r.pass.unwrap_or(true));
    let sel_pass = selection.as_ref().map_or(true, |s| {
        s.thm4_pass.unwrap_or(true) && s.thm8_pass.unwrap_or(true)
    });
    let est_pass = estimator_checks.as_ref().map_or(true, |e| e.pass);
    let pass = rows_pass && sel_pass && est_pass;

    Ok(BoundCertificate {
        certificate_version: 1,
        instance: instance.to_string(),
        n,
        d,
        lambda_grid: grid.to_vec(),
        methods: methods.iter().map(|m| m.tag()).collect(),
        constants,
        kappa1,
        kappa2,
        kappa3,
        moments: moments.into_values().collect(),
        rows,
        selection,
        estimator_checks,
        pass,
    })
}

fn estimator_level_checks(
    model: &Model,
    data: &Dataset,
    sweep: &SweepData,
    cs: &ConstantSet,
    kappa2: Option<f64>,
    cfg: &SolverConfig,
) -> Result<EstimatorChecks> {
    let n = data.n();
    let nf = n as f64;
    let c = cs.c_m;
    let mut proximity_max: Option<f64> = None;
    let mut acv_cv_max: Option<f64> = None;
    let mut ij_acv_max: Option<f64> = None;
    let mut prox_ij_max: Option<f64> = None;
    let mut prox_proximity_max: Option<f64> = None;
    let mut prox_fixed_point_max: Option<f64> = None;
    fn upd(slot: &mut Option<f64>, v: f64) {
        *slot = Some(slot.map_or(v, |m| m.max(v)));
    }

    let loo_is_pointwise = sweep.cv[0].fold_fits.len() == n;
    for (k, &lam) in sweep.grid.iter().enumerate() {
        let beta = &sweep.fits[k].beta;
        let grads: Vec<DVector<f64>> = (0..n)
            .map(|i| model.loss.grad(data.point(i), beta))
            .collect();

        if loo_is_pointwise {
            for i in 0..n {
                let lhs = (beta - &sweep.cv[k].fold_fits[i].beta).norm();
                upd(&mut proximity_max, lhs - grads[i].norm() / (nf * c));
            }
        }
        if let (Some(acvs), Some(k2)) = (sweep.approx.get("acv"), kappa2) {
            if loo_is_pointwise {
                for i in 0..n {
                    let lhs = (&acvs[k].estimators[i] - &sweep.cv[k].fold_fits[i].beta).norm();
                    let rhs = k2 / (c * c * nf * nf) * grads[i].norm_squared();
                    upd(&mut acv_cv_max, lhs - rhs);
                }
            }
        }
        if let (Some(acvs), Some(ijs)) = (sweep.approx.get("acv"), sweep.approx.get("acv_ij")) {
            let cll = cs.c_lambda(lam);
            for i in 0..n {
                let lhs = (&ijs[k].estimators[i] - &acvs[k].estimators[i]).norm();
                let hnorm = linalg::max_eigenvalue_power(
                    &model.loss.hess(data.point(i), beta),
                    1e-10,
                    10_000,
                );
                let rhs = hnorm * grads[i].norm() / (cll * cll * nf * nf);
                upd(&mut ij_acv_max, lhs - rhs);
            }
        }
        if let Some(proxs) = sweep.approx.get("proxacv") {
            for i in 0..n {
                let lhs = (&proxs[k].estimators[i] - beta).norm();
                upd(&mut prox_proximity_max, lhs - grads[i].norm() / (nf * c));
            }
            // fixed-point identity: β̂ = prox_{λπ}^{H_{ℓ,i}}(β̂ - H⁻¹∇ℓ(P̂, β̂))
            let full_grad = model.loss_grad(data, &Weights::full(n), beta);
            let full_hess = model.loss_hess(data, &Weights::full(n), beta);
            for i in 0..n {
                let hi = &full_hess - model.loss.hess(data.point(i), beta) / nf;
                let out = prox_quadratic(&hi, beta, &full_grad, model, lam, cfg)?;
                upd(&mut prox_fixed_point_max, (out - beta).norm());
            }
            if let Some(prox_ijs) = sweep.approx.get("proxacv_ij") {
                for i in 0..n {
                    let lhs = (&prox_ijs[k].estimators[i] - &proxs[k].estimators[i]).norm();
                    let hnorm = linalg::max_eigenvalue_power(
                        &model.loss.hess(data.point(i), beta),
                        1e-10,
                        10_000,
                    );
                    let rhs = hnorm * grads[i].norm() / (c * c * nf * nf);
                    upd(&mut prox_ij_max, lhs - rhs);
                }
            }
        }
    }

    let ineq_ok = [
        proximity_max,
        acv_cv_max,
        ij_acv_max,
        prox_ij_max,
        prox_proximity_max,
    ]
    .iter()
    .all(|m| m.map_or(true, |v| v <= PASS_SLACK));
    // the identity holds up to inner solver tolerance, not PASS_SLACK
    let fp_ok = prox_fixed_point_max.map_or(true, |v| v <= 1e-8);
    Ok(EstimatorChecks {
        proximity_max,
        acv_cv_max,
        ij_acv_max,
        prox_ij_max,
        prox_proximity_max,
        prox_fixed_point_max,
        pass: ineq_ok && fp_ok,
    })
}
