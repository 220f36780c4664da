//! Loss and regularizer families with derivative oracles up to third order,
//! plus the conservative analytic constants consumed by the bound module.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::dataset::{Dataset, Lambda, Weights};
use crate::error::{Error, Result};
use crate::linalg;
use crate::solver::{fit_erm, FitResult, SolverConfig};

/// max |sigma''| over the real line, attained at sigma = (3 ± sqrt(3))/6.
const LOGISTIC_MAX_D2: f64 = 0.09622504486493764; // 1/(6 sqrt(3))
/// max |sigma'''| over the real line, attained at sigma = 1/2.
const LOGISTIC_MAX_D3: f64 = 0.125;

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

/// GLM link functions for per-point losses of the form `phi(x'b) - y * x'b`
/// (logistic) or `exp(-sign(y) x'b)` (exponential).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Link {
    Logistic,
    Exponential,
}

/// User-supplied scalar loss with derivative oracles and optional constants.
pub struct CustomLoss {
    pub value: Arc<dyn Fn(&DVector<f64>, &DVector<f64>) -> f64 + Send + Sync>,
    pub grad: Arc<dyn Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync>,
    pub hess: Arc<dyn Fn(&DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync>,
    /// Directional third derivative `∇³ℓ(z, β)[v, v]` as a vector.
    pub third_vv:
        Option<Arc<dyn Fn(&DVector<f64>, &DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync>>,
    /// Tensor-vector contraction `∇³ℓ(z, β)[v]` as a matrix.
    pub third_mat:
        Option<Arc<dyn Fn(&DVector<f64>, &DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync>>,
    /// Per-point gradient Lipschitz constants; no numeric global estimation is
    /// attempted for custom losses.
    pub lipschitz: Option<Vec<f64>>,
    pub hess_bound: Option<f64>,
    pub hess_lipschitz: Option<f64>,
    pub third_lipschitz: Option<f64>,
}

impl std::fmt::Debug for CustomLoss {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CustomLoss").finish_non_exhaustive()
    }
}

/// Per-point loss family.
#[derive(Debug, Clone)]
pub enum Loss {
    /// `scale * (β - z)' W (β - z)` with `W = I` by default. The standard
    /// squared loss is `scale = 1/2`.
    Quadratic {
        scale: f64,
        weight: Option<DMatrix<f64>>,
    },
    /// GLM loss on points `(x, y)` with the label in the last coordinate.
    Glm { link: Link },
    Custom(Arc<CustomLoss>),
}

impl Loss {
    pub fn squared() -> Self {
        Loss::Quadratic {
            scale: 0.5,
            weight: None,
        }
    }

    pub fn logistic() -> Self {
        Loss::Glm {
            link: Link::Logistic,
        }
    }

    /// Dimension of the parameter vector for points of dimension `data_dim`.
    pub fn param_dim(&self, data_dim: usize) -> usize {
        match self {
            Loss::Glm { .. } => data_dim - 1,
            _ => data_dim,
        }
    }

    fn glm_parts<'a>(z: &'a DVector<f64>, beta: &DVector<f64>) -> (DVector<f64>, f64, f64) {
        let d = z.len() - 1;
        debug_assert_eq!(beta.len(), d);
        let x = DVector::from_fn(d, |i, _| z[i]);
        let y = z[d];
        let t = x.dot(beta);
        (x, y, t)
    }

    pub fn value(&self, z: &DVector<f64>, beta: &DVector<f64>) -> f64 {
        match self {
            Loss::Quadratic { scale, weight } => {
                let r = beta - z;
                match weight {
                    None => scale * r.norm_squared(),
                    Some(w) => scale * r.dot(&(w * &r)),
                }
            }
            Loss::Glm { link } => {
                let (_, y, t) = Self::glm_parts(z, beta);
                match link {
                    Link::Logistic => softplus(t) - y * t,
                    Link::Exponential => {
                        let s = if y > 0.0 { 1.0 } else { -1.0 };
                        (-s * t).exp()
                    }
                }
            }
            Loss::Custom(c) => (c.value)(z, beta),
        }
    }

    pub fn grad(&self, z: &DVector<f64>, beta: &DVector<f64>) -> DVector<f64> {
        match self {
            Loss::Quadratic { scale, weight } => {
                let r = beta - z;
                match weight {
                    None => r * (2.0 * scale),
                    Some(w) => (w * r) * (2.0 * scale),
                }
            }
            Loss::Glm { link } => {
                let (x, y, t) = Self::glm_parts(z, beta);
                match link {
                    Link::Logistic => x * (sigmoid(t) - y),
                    Link::Exponential => {
                        let s = if y > 0.0 { 1.0 } else { -1.0 };
                        x * (-s * (-s * t).exp())
                    }
                }
            }
            Loss::Custom(c) => (c.grad)(z, beta),
        }
    }

    pub fn hess(&self, z: &DVector<f64>, beta: &DVector<f64>) -> DMatrix<f64> {
        match self {
            Loss::Quadratic { scale, weight } => {
                let d = beta.len();
                match weight {
                    None => DMatrix::identity(d, d) * (2.0 * scale),
                    Some(w) => w * (2.0 * scale),
                }
            }
            Loss::Glm { link } => {
                let (x, y, t) = Self::glm_parts(z, beta);
                let c = match link {
                    Link::Logistic => {
                        let s = sigmoid(t);
                        s * (1.0 - s)
                    }
                    Link::Exponential => {
                        let s = if y > 0.0 { 1.0 } else { -1.0 };
                        (-s * t).exp()
                    }
                };
                let mut h = &x * x.transpose();
                h *= c;
                h
            }
            Loss::Custom(c) => (c.hess)(z, beta),
        }
    }

    /// `∇³ℓ(z, β)[v, v]` as a vector. Third-order tensors are never
    /// materialized; only directional contractions are exposed.
    pub fn third_vv(
        &self,
        z: &DVector<f64>,
        beta: &DVector<f64>,
        v: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        match self {
            Loss::Quadratic { .. } => Ok(DVector::zeros(beta.len())),
            Loss::Glm { link } => {
                let (x, y, t) = Self::glm_parts(z, beta);
                let xv = x.dot(v);
                let c = match link {
                    Link::Logistic => {
                        let s = sigmoid(t);
                        s * (1.0 - s) * (1.0 - 2.0 * s)
                    }
                    Link::Exponential => {
                        let s = if y > 0.0 { 1.0 } else { -1.0 };
                        -s * (-s * t).exp()
                    }
                };
                Ok(x * (c * xv * xv))
            }
            Loss::Custom(c) => match &c.third_vv {
                Some(f) => Ok(f(z, beta, v)),
                None => Err(Error::BoundsNotEvaluable(
                    "custom loss has no third-derivative oracle".into(),
                )),
            },
        }
    }

    /// `∇³ℓ(z, β)[v]` as a matrix (used by third-order Taylor models).
    pub fn third_mat(
        &self,
        z: &DVector<f64>,
        beta: &DVector<f64>,
        v: &DVector<f64>,
    ) -> Result<DMatrix<f64>> {
        match self {
            Loss::Quadratic { .. } => Ok(DMatrix::zeros(beta.len(), beta.len())),
            Loss::Glm { link } => {
                let (x, y, t) = Self::glm_parts(z, beta);
                let xv = x.dot(v);
                let c = match link {
                    Link::Logistic => {
                        let s = sigmoid(t);
                        s * (1.0 - s) * (1.0 - 2.0 * s)
                    }
                    Link::Exponential => {
                        let s = if y > 0.0 { 1.0 } else { -1.0 };
                        -s * (-s * t).exp()
                    }
                };
                let mut m = &x * x.transpose();
                m *= c * xv;
                Ok(m)
            }
            Loss::Custom(c) => match &c.third_mat {
                Some(f) => Ok(f(z, beta, v)),
                None => Err(Error::BoundsNotEvaluable(
                    "custom loss has no third-derivative oracle".into(),
                )),
            },
        }
    }
}

/// Regularizer family. All kinds are convex, nonnegative, and minimized at 0.
#[derive(Debug, Clone, PartialEq)]
pub enum Reg {
    /// `scale * ||β||₂²`. `scale = 1` matches `π(β) = ||β||²`; the
    /// one-dimensional examples use `scale = 1/2` (`π(β) = β²/2`).
    Ridge { scale: f64 },
    /// `||β||₁`.
    L1,
    /// `l1 ||β||₁ + l2 ||β||₂²`.
    ElasticNet { l1: f64, l2: f64 },
    /// `Σ_j δ² (sqrt(1 + (β_j/δ)²) - 1)`.
    PseudoHuber { delta: f64 },
    /// Per coordinate: `t²/(2δ)` for `|t| ≤ δ`, `|t| - δ/2` outside.
    /// C¹ with a piecewise-constant second derivative; at the kink `|t| = δ`
    /// the curvature convention is the outer branch (0).
    PatchedLasso { delta: f64 },
}

impl Reg {
    pub fn smooth(&self) -> bool {
        match self {
            Reg::Ridge { .. } | Reg::PseudoHuber { .. } | Reg::PatchedLasso { .. } => true,
            Reg::L1 => false,
            Reg::ElasticNet { l1, .. } => *l1 == 0.0,
        }
    }

    pub fn prox_capable(&self) -> bool {
        match self {
            Reg::PseudoHuber { .. } => true, // 1-D Newton/bisection, no closed form
            _ => true,
        }
    }

    /// `argmin π` (the λ = ∞ estimator).
    pub fn argmin(&self, dim: usize) -> DVector<f64> {
        DVector::zeros(dim)
    }

    pub fn value(&self, beta: &DVector<f64>) -> f64 {
        match self {
            Reg::Ridge { scale } => scale * beta.norm_squared(),
            Reg::L1 => beta.iter().map(|b| b.abs()).sum(),
            Reg::ElasticNet { l1, l2 } => {
                l1 * beta.iter().map(|b| b.abs()).sum::<f64>() + l2 * beta.norm_squared()
            }
            Reg::PseudoHuber { delta } => beta
                .iter()
                .map(|b| delta * delta * ((1.0 + (b / delta).powi(2)).sqrt() - 1.0))
                .sum(),
            Reg::PatchedLasso { delta } => beta
                .iter()
                .map(|b| {
                    if b.abs() <= *delta {
                        b * b / (2.0 * delta)
                    } else {
                        b.abs() - delta / 2.0
                    }
                })
                .sum(),
        }
    }

    /// Gradient where the regularizer is smooth (the patched Lasso uses its
    /// everywhere-defined C¹ derivative).
    pub fn grad(&self, beta: &DVector<f64>) -> Result<DVector<f64>> {
        match self {
            Reg::Ridge { scale } => Ok(beta * (2.0 * scale)),
            Reg::PseudoHuber { delta } => Ok(DVector::from_fn(beta.len(), |j, _| {
                beta[j] / (1.0 + (beta[j] / delta).powi(2)).sqrt()
            })),
            Reg::PatchedLasso { delta } => Ok(DVector::from_fn(beta.len(), |j, _| {
                if beta[j].abs() <= *delta {
                    beta[j] / delta
                } else {
                    beta[j].signum()
                }
            })),
            Reg::ElasticNet { l1: 0.0, l2 } => Ok(beta * (2.0 * l2)),
            Reg::L1 | Reg::ElasticNet { .. } => Err(Error::NonSmoothRegularizer),
        }
    }

    /// Hessian where defined (a.e. for the patched Lasso, with the kink
    /// convention documented on the type).
    pub fn hess(&self, beta: &DVector<f64>) -> Result<DMatrix<f64>> {
        let d = beta.len();
        match self {
            Reg::Ridge { scale } => Ok(DMatrix::identity(d, d) * (2.0 * scale)),
            Reg::PseudoHuber { delta } => Ok(DMatrix::from_diagonal(&DVector::from_fn(
                d,
                |j, _| (1.0 + (beta[j] / delta).powi(2)).powf(-1.5),
            ))),
            Reg::PatchedLasso { delta } => Ok(DMatrix::from_diagonal(&DVector::from_fn(
                d,
                // solver residuals can leave an estimate a hair inside the
                // kink; coordinates within the tolerance band take the outer
                // branch (zero curvature)
                |j, _| {
                    if beta[j].abs() < delta * (1.0 - 1e-7) {
                        1.0 / delta
                    } else {
                        0.0
                    }
                },
            ))),
            Reg::ElasticNet { l1: 0.0, l2 } => Ok(DMatrix::identity(d, d) * (2.0 * l2)),
            Reg::L1 | Reg::ElasticNet { .. } => Err(Error::NonSmoothRegularizer),
        }
    }

    /// `∇³π(β)[v, v]` for smooth kinds.
    pub fn third_vv(&self, beta: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
        match self {
            Reg::Ridge { .. } | Reg::ElasticNet { l1: 0.0, .. } => Ok(DVector::zeros(beta.len())),
            Reg::PseudoHuber { delta } => Ok(DVector::from_fn(beta.len(), |j, _| {
                let u = beta[j] / delta;
                (-3.0 * beta[j] / (delta * delta)) * (1.0 + u * u).powf(-2.5) * v[j] * v[j]
            })),
            Reg::PatchedLasso { .. } => Ok(DVector::zeros(beta.len())), // a.e.
            Reg::L1 | Reg::ElasticNet { .. } => Err(Error::NonSmoothRegularizer),
        }
    }

    /// `∇³π(β)[v]` as a matrix for smooth kinds.
    pub fn third_mat(&self, beta: &DVector<f64>, v: &DVector<f64>) -> Result<DMatrix<f64>> {
        let d = beta.len();
        match self {
            Reg::Ridge { .. } | Reg::ElasticNet { l1: 0.0, .. } => Ok(DMatrix::zeros(d, d)),
            Reg::PseudoHuber { delta } => Ok(DMatrix::from_diagonal(&DVector::from_fn(
                d,
                |j, _| {
                    let u = beta[j] / delta;
                    (-3.0 * beta[j] / (delta * delta)) * (1.0 + u * u).powf(-2.5) * v[j]
                },
            ))),
            Reg::PatchedLasso { .. } => Ok(DMatrix::zeros(d, d)),
            Reg::L1 | Reg::ElasticNet { .. } => Err(Error::NonSmoothRegularizer),
        }
    }

    /// Exact scalar prox: `argmin_t  h/2 (t - c)² + lam * pen(t)`.
    pub fn prox_1d(&self, h: f64, c: f64, lam: f64) -> f64 {
        debug_assert!(h > 0.0 && lam >= 0.0);
        if lam == 0.0 {
            return c;
        }
        let soft = |x: f64, t: f64| x.signum() * (x.abs() - t).max(0.0);
        match self {
            Reg::Ridge { scale } => h * c / (h + 2.0 * lam * scale),
            Reg::L1 => soft(c, lam / h),
            Reg::ElasticNet { l1, l2 } => soft(h * c, lam * l1) / (h + 2.0 * lam * l2),
            Reg::PatchedLasso { delta } => {
                let mut best = (f64::INFINITY, 0.0);
                let obj = |t: f64| 0.5 * h * (t - c) * (t - c) + lam * {
                    if t.abs() <= *delta {
                        t * t / (2.0 * delta)
                    } else {
                        t.abs() - delta / 2.0
                    }
                };
                let mut consider = |t: f64| {
                    let v = obj(t);
                    if v < best.0 {
                        best = (v, t);
                    }
                };
                let inner = h * c / (h + lam / delta);
                if inner.abs() <= *delta {
                    consider(inner);
                }
                for s in [-1.0, 1.0] {
                    let outer = c - s * lam / h;
                    if outer * s >= *delta {
                        consider(outer);
                    }
                }
                consider(delta.copysign(c));
                best.1
            }
            Reg::PseudoHuber { delta } => {
                // phi'(t) = h (t - c) + lam t / sqrt(1 + (t/d)^2): strictly increasing.
                let dphi = |t: f64| h * (t - c) + lam * t / (1.0 + (t / delta).powi(2)).sqrt();
                let (mut lo, mut hi) = if c >= 0.0 { (0.0, c) } else { (c, 0.0) };
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if dphi(mid) > 0.0 {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                    if hi - lo <= 1e-16 * (1.0 + hi.abs()) {
                        break;
                    }
                }
                0.5 * (lo + hi)
            }
        }
    }
}

/// Weighted objective evaluation `m(μ, β, λ) = Σ w_i ℓ(z_i, β) + λ π(β)`.
///
/// When the regularizer is non-smooth, `gradient` and `hessian` cover the loss
/// part only and `reg_smooth` is false.
#[derive(Debug, Clone)]
pub struct ObjectiveEval {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub hessian: DMatrix<f64>,
    pub reg_smooth: bool,
}

/// A loss/regularizer pair.
#[derive(Debug, Clone)]
pub struct Model {
    pub loss: Loss,
    pub reg: Reg,
}

impl Model {
    pub fn new(loss: Loss, reg: Reg) -> Self {
        Self { loss, reg }
    }

    pub fn param_dim(&self, data: &Dataset) -> usize {
        self.loss.param_dim(data.dim())
    }

    fn check_dim(&self, data: &Dataset, beta: &DVector<f64>) -> Result<()> {
        let expect = self.param_dim(data);
        if beta.len() != expect {
            return Err(Error::DimensionMismatch {
                expected: expect,
                got: beta.len(),
            });
        }
        Ok(())
    }

    /// Weighted loss value `ℓ(μ, β)`.
    pub fn loss_value(&self, data: &Dataset, w: &Weights, beta: &DVector<f64>) -> f64 {
        w.iter_active()
            .map(|(i, wi)| wi * self.loss.value(data.point(i), beta))
            .sum()
    }

    /// Weighted loss gradient `∇ℓ(μ, β)`.
    pub fn loss_grad(&self, data: &Dataset, w: &Weights, beta: &DVector<f64>) -> DVector<f64> {
        let mut g = DVector::zeros(beta.len());
        for (i, wi) in w.iter_active() {
            g.axpy(wi, &self.loss.grad(data.point(i), beta), 1.0);
        }
        g
    }

    /// Weighted loss Hessian `∇²ℓ(μ, β)`.
    pub fn loss_hess(&self, data: &Dataset, w: &Weights, beta: &DVector<f64>) -> DMatrix<f64> {
        let d = beta.len();
        let mut h = DMatrix::zeros(d, d);
        for (i, wi) in w.iter_active() {
            h += self.loss.hess(data.point(i), beta) * wi;
        }
        h
    }

    /// Weighted `∇³ℓ(μ, β)[v, v]`.
    pub fn loss_third_vv(
        &self,
        data: &Dataset,
        w: &Weights,
        beta: &DVector<f64>,
        v: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        let mut out = DVector::zeros(beta.len());
        for (i, wi) in w.iter_active() {
            out.axpy(wi, &self.loss.third_vv(data.point(i), beta, v)?, 1.0);
        }
        Ok(out)
    }

    /// Weighted `∇³ℓ(μ, β)[v]` as a matrix.
    pub fn loss_third_mat(
        &self,
        data: &Dataset,
        w: &Weights,
        beta: &DVector<f64>,
        v: &DVector<f64>,
    ) -> Result<DMatrix<f64>> {
        let d = beta.len();
        let mut out = DMatrix::zeros(d, d);
        for (i, wi) in w.iter_active() {
            out += self.loss.third_mat(data.point(i), beta, v)? * wi;
        }
        Ok(out)
    }

    /// Full objective value, including the (possibly non-smooth) regularizer.
    pub fn objective_value(
        &self,
        data: &Dataset,
        w: &Weights,
        beta: &DVector<f64>,
        lambda: f64,
    ) -> f64 {
        self.loss_value(data, w, beta) + lambda * self.reg.value(beta)
    }

    /// Evaluate value/gradient/Hessian of the objective at finite λ.
    pub fn evaluate(
        &self,
        data: &Dataset,
        w: &Weights,
        beta: &DVector<f64>,
        lambda: Lambda,
    ) -> Result<ObjectiveEval> {
        let lam = lambda.finite()?;
        self.check_dim(data, beta)?;
        let value = self.objective_value(data, w, beta, lam);
        let mut gradient = self.loss_grad(data, w, beta);
        let mut hessian = self.loss_hess(data, w, beta);
        let reg_smooth = self.reg.smooth();
        if reg_smooth {
            gradient += self.reg.grad(beta)? * lam;
            hessian += self.reg.hess(beta)? * lam;
        }
        Ok(ObjectiveEval {
            value,
            gradient,
            hessian,
            reg_smooth,
        })
    }

    /// Held-out loss of a single point.
    pub fn heldout_loss(&self, data: &Dataset, i: usize, beta: &DVector<f64>) -> f64 {
        self.loss.value(data.point(i), beta)
    }
}

/// Analytic/empirical constants backing the certificates.
///
/// `q` is the gradient-growth exponent, fixed at 2 throughout.
#[derive(Debug, Clone, Serialize)]
pub struct ConstantSet {
    /// Loss-curvature floor over leave-one-out Hessians at the grid fits.
    pub c_ell: f64,
    /// Regularizer curvature (0 for kinds with no usable curvature).
    pub c_pi: f64,
    /// Threshold above which the regularizer contributes curvature.
    pub lambda_pi: f64,
    /// Gradient-growth constant of the leave-one-out objectives.
    pub c_m: f64,
    /// Per-point gradient Lipschitz constants L_i (None when unbounded).
    pub l_i: Option<Vec<f64>>,
    pub c_ell_2: Option<f64>,
    pub c_pi_2: Option<f64>,
    pub c_ell_3: Option<f64>,
    pub c_pi_3: Option<f64>,
    pub c_ell_4: Option<f64>,
    pub c_pi_4: Option<f64>,
    /// `||∇π(β̂(0))||`, None when the regularizer is non-smooth.
    pub grad_reg_at_est0: Option<f64>,
    pub q: f64,
    /// "analytic" for exact constants, "empirical" when the curvature floor
    /// comes from grid-evaluated Hessian eigenvalues (0.99 safety factor).
    pub curvature_source: String,
}

impl ConstantSet {
    /// Curvature `c_{λ',λ} = c_ℓ + λ' c_π 1{λ ≥ λ_π}`.
    pub fn c_cross(&self, lambda_prime: f64, lambda: f64) -> f64 {
        if lambda >= self.lambda_pi {
            self.c_ell + lambda_prime * self.c_pi
        } else {
            self.c_ell
        }
    }

    /// Per-λ curvature `c_{λ,λ}`.
    pub fn c_lambda(&self, lambda: f64) -> f64 {
        self.c_cross(lambda, lambda)
    }

    pub fn bounds_evaluable(&self) -> bool {
        self.c_m > 0.0
    }
}

/// Empirical curvature safety factor applied to grid-estimated eigenvalue
/// minima.
pub const EMPIRICAL_CURVATURE_SAFETY: f64 = 0.99;

/// Compute conservative constants valid on `grid`, fitting the estimator at
/// each grid point internally. See [`constants_with_fits`] for the variant
/// that reuses existing fits.
pub fn analytic_constants(
    model: &Model,
    data: &Dataset,
    grid: &[f64],
    cfg: &SolverConfig,
) -> Result<ConstantSet> {
    let mut fits = Vec::with_capacity(grid.len());
    let mut warm: Option<DVector<f64>> = None;
    for &lam in grid {
        let fit = fit_erm(model, data, &Weights::full(data.n()), Lambda::Finite(lam), cfg, warm.as_ref())?;
        warm = Some(fit.beta.clone());
        fits.push(fit);
    }
    constants_with_fits(model, data, grid, &fits, cfg)
}

/// Compute constants reusing fits already available at every grid λ.
pub fn constants_with_fits(
    model: &Model,
    data: &Dataset,
    grid: &[f64],
    fits: &[FitResult],
    cfg: &SolverConfig,
) -> Result<ConstantSet> {
    assert_eq!(grid.len(), fits.len(), "one fit per grid point required");
    let n = data.n();

    // Per-point Lipschitz constants and loss smoothness constants.
    let (l_i, c_ell_2, c_ell_3, c_ell_4): (Option<Vec<f64>>, Option<f64>, Option<f64>, Option<f64>) =
        match &model.loss {
            Loss::Quadratic { scale, weight } => {
                let lmax = match weight {
                    None => 2.0 * scale,
                    Some(w) => 2.0 * scale * linalg::max_eigenvalue_power(w, 1e-12, 10_000),
                };
                (
                    Some(vec![lmax; n]),
                    Some(lmax),
                    Some(0.0),
                    Some(0.0),
                )
            }
            Loss::Glm {
                link: Link::Logistic,
            } => {
                let norms: Vec<f64> = (0..n)
                    .map(|i| {
                        let z = data.point(i);
                        (0..z.len() - 1).map(|j| z[j] * z[j]).sum::<f64>().sqrt()
                    })
                    .collect();
                let l: Vec<f64> = norms.iter().map(|x| 0.25 * x * x).collect();
                let c2 = l.iter().sum::<f64>() / n as f64;
                let c3 = LOGISTIC_MAX_D2 * norms.iter().map(|x| x.powi(3)).sum::<f64>() / n as f64;
                let c4 = LOGISTIC_MAX_D3 * norms.iter().map(|x| x.powi(4)).sum::<f64>() / n as f64;
                (Some(l), Some(c2), Some(c3), Some(c4))
            }
            Loss::Glm {
                link: Link::Exponential,
            } => (None, None, None, None),
            Loss::Custom(c) => (
                c.lipschitz.clone(),
                c.hess_bound,
                c.hess_lipschitz,
                c.third_lipschitz,
            ),
        };

    // Regularizer constants.
    let (c_pi, lambda_pi, c_pi_2, c_pi_3, c_pi_4): (f64, f64, Option<f64>, Option<f64>, Option<f64>) =
        match &model.reg {
            Reg::Ridge { scale } => (2.0 * scale, 0.0, Some(2.0 * scale), Some(0.0), Some(0.0)),
            Reg::L1 => (0.0, 0.0, None, None, None),
            Reg::ElasticNet { l1, l2 } => {
                if *l1 == 0.0 {
                    (2.0 * l2, 0.0, Some(2.0 * l2), Some(0.0), Some(0.0))
                } else {
                    (0.0, 0.0, None, None, None)
                }
            }
            Reg::PseudoHuber { delta } => {
                // Curvature along the grid fits; globally the penalty is only
                // locally strongly convex around its minimizer.
                let mut cmin = f64::INFINITY;
                for fit in fits {
                    let h = model.reg.hess(&fit.beta)?;
                    cmin = cmin.min(linalg::min_eigenvalue(&h));
                }
                (
                    EMPIRICAL_CURVATURE_SAFETY * cmin.max(0.0),
                    0.0,
                    Some(1.0),
                    Some(1.5 / delta * (0.8f64).powf(2.5)),
                    Some(3.0 / (delta * delta)),
                )
            }
            Reg::PatchedLasso { delta } => (0.0, 0.0, Some(1.0 / delta), None, None),
        };

    // Curvature floors over leave-one-out Hessians at the grid fits.
    let analytic_quadratic = matches!(&model.loss, Loss::Quadratic { .. });
    let mut c_ell = f64::INFINITY;
    let mut c_m = f64::INFINITY;
    for (k, fit) in fits.iter().enumerate() {
        let lam = grid[k];
        if analytic_quadratic {
            // LOO loss Hessian is constant: ((n-1)/n) * 2 s W.
            let h = model.loss.hess(data.point(0), &fit.beta) * ((n - 1) as f64 / n as f64);
            let me = linalg::min_eigenvalue(&h);
            c_ell = c_ell.min(me);
            let reg_me = if model.reg.smooth() {
                linalg::min_eigenvalue(&model.reg.hess(&fit.beta)?)
            } else {
                0.0
            };
            c_m = c_m.min(me + lam * reg_me);
        } else {
            let full = model.loss_hess(data, &Weights::full(n), &fit.beta);
            let reg_h = if model.reg.smooth() {
                Some(model.reg.hess(&fit.beta)?)
            } else {
                None
            };
            for i in 0..n {
                let mut hi = full.clone();
                hi -= self_point_hess(model, data, i, &fit.beta) / n as f64;
                let me_loss = linalg::min_eigenvalue(&hi);
                c_ell = c_ell.min(me_loss);
                let me_obj = match &reg_h {
                    Some(rh) => linalg::min_eigenvalue(&(hi + rh * lam)),
                    None => me_loss,
                };
                c_m = c_m.min(me_obj);
            }
        }
    }
    let curvature_source = if analytic_quadratic {
        "analytic".to_string()
    } else {
        c_ell *= EMPIRICAL_CURVATURE_SAFETY;
        c_m *= EMPIRICAL_CURVATURE_SAFETY;
        "empirical".to_string()
    };
    c_ell = c_ell.max(0.0);
    c_m = c_m.max(0.0);

    // ||∇π(β̂(0))|| from a λ = 0 fit.
    let grad_reg_at_est0 = if model.reg.smooth() {
        let fit0 = match grid.iter().position(|&l| l == 0.0) {
            Some(k) => fits[k].clone(),
            None => fit_erm(
                model,
                data,
                &Weights::full(n),
                Lambda::Finite(0.0),
                cfg,
                fits.first().map(|f| &f.beta),
            )?,
        };
        Some(model.reg.grad(&fit0.beta)?.norm())
    } else {
        None
    };

    Ok(ConstantSet {
        c_ell,
        c_pi,
        lambda_pi,
        c_m,
        l_i,
        c_ell_2,
        c_pi_2,
        c_ell_3,
        c_pi_3,
        c_ell_4,
        c_pi_4,
        grad_reg_at_est0,
        q: 2.0,
        curvature_source,
    })
}

fn self_point_hess(model: &Model, data: &Dataset, i: usize, beta: &DVector<f64>) -> DMatrix<f64> {
    model.loss.hess(data.point(i), beta)
}
