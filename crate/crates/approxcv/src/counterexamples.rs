//! Built-in adversarial instances with closed-form reference values, used to
//! pit the generic pipeline against hand-derived formulas.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::model::{Loss, Model, Reg};

/// Which built-in instance to construct.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "case")]
pub enum Case {
    /// 1-D Lasso with four atoms matched to half-normal moments; the
    /// support-restricted IJ approximation fails at λ = z̄.
    Prop5,
    /// Same atom structure under the patched-Lasso penalty with z̄ = 2δ.
    Prop6 { delta: f64 },
    /// 1-D Lasso split between two atoms; ProxACV is flat between λ = 0 and
    /// λ = z̄ while the estimators are √(2/n) apart.
    Prop7,
    /// 2-D anisotropic quadratic loss with a ridge penalty (assessment-curve
    /// shape instance).
    Fig1a,
    /// 3-D quadratic loss with an ℓ1 penalty (ProxACV multimodality instance).
    Fig1b,
}

impl Case {
    pub fn tag(&self) -> &'static str {
        match self {
            Case::Prop5 => "prop5",
            Case::Prop6 { .. } => "prop6",
            Case::Prop7 => "prop7",
            Case::Fig1a => "fig1a",
            Case::Fig1b => "fig1b",
        }
    }
}

/// A constructed instance: dataset, model, and the distinguished penalty value
/// the closed forms refer to.
#[derive(Debug, Clone)]
pub struct Built {
    pub dataset: Dataset,
    pub model: Model,
    /// λ at which the reference gap is evaluated (z̄ for Prop 5/7, δ for
    /// Prop 6); None for the curve-shape instances.
    pub lambda_star: Option<f64>,
    pub zbar: Option<f64>,
    pub description: String,
}

/// Atom offsets `(a, b)` with `a² + b² = 2` and `a + b = 2√(2/π)`, i.e. the
/// first two half-normal moments: `a = √(2/π) + √(1 - 2/π)`,
/// `b = √(2/π) - √(1 - 2/π)`.
pub fn half_normal_atoms() -> (f64, f64) {
    let m = (2.0 / std::f64::consts::PI).sqrt();
    let s = (1.0 - 2.0 / std::f64::consts::PI).sqrt();
    (m + s, m - s)
}

fn four_atom_dataset(n: usize, zbar: f64) -> Result<Dataset> {
    if n % 4 != 0 || n < 8 {
        return Err(Error::InvalidCase(format!(
            "n must be a multiple of 4 and at least 8, got {n}"
        )));
    }
    let (a, b) = half_normal_atoms();
    let atoms = [zbar - a, zbar - b, zbar + b, zbar + a];
    let mut vals = Vec::with_capacity(n);
    for atom in atoms {
        vals.extend(std::iter::repeat(atom).take(n / 4));
    }
    Dataset::from_scalars(&vals)
}

/// Moment-matched point cloud: ± spikes of size √(n/2) along each axis plus
/// center copies, so the sample mean is `mean` and the (1/n-normalized)
/// sample covariance is the identity.
fn spike_cloud(n: usize, mean: &[f64]) -> Result<Dataset> {
    let d = mean.len();
    if n < 2 * d + 1 {
        return Err(Error::InvalidCase(format!(
            "n must be at least {} for a {d}-dimensional spike cloud, got {n}",
            2 * d + 1
        )));
    }
    let c = (n as f64 / 2.0).sqrt();
    let mut rows = Vec::with_capacity(n);
    for j in 0..d {
        for sign in [1.0, -1.0] {
            let mut row = mean.to_vec();
            row[j] += sign * c;
            rows.push(row);
        }
    }
    while rows.len() < n {
        rows.push(mean.to_vec());
    }
    Dataset::from_rows(&rows)
}

/// Construct a built-in instance at sample size `n`.
pub fn build(case: Case, n: usize) -> Result<Built> {
    match case {
        Case::Prop5 => {
            let zbar = (2.0 / n as f64).sqrt();
            let dataset = four_atom_dataset(n, zbar)?;
            Ok(Built {
                dataset,
                model: Model::new(Loss::squared(), Reg::L1),
                lambda_star: Some(zbar),
                zbar: Some(zbar),
                description: format!("prop5: 1-D lasso, four half-normal atoms, n = {n}"),
            })
        }
        Case::Prop6 { delta } => {
            if delta <= 0.0 {
                return Err(Error::InvalidCase("delta must be positive".into()));
            }
            let zbar = 2.0 * delta;
            let dataset = four_atom_dataset(n, zbar)?;
            Ok(Built {
                dataset,
                model: Model::new(Loss::squared(), Reg::PatchedLasso { delta }),
                lambda_star: Some(delta),
                zbar: Some(zbar),
                description: format!(
                    "prop6: 1-D patched lasso, four half-normal atoms, n = {n}, delta = {delta}"
                ),
            })
        }
        Case::Prop7 => {
            if n < 4 || n % 2 != 0 {
                return Err(Error::InvalidCase(format!(
                    "n must be even and at least 4, got {n}"
                )));
            }
            let a = 2.0f64.sqrt();
            let b = 2.0 * (2.0 / n as f64).sqrt() - 2.0f64.sqrt();
            let mut vals = vec![a; n / 2];
            vals.extend(vec![b; n / 2]);
            let zbar = (2.0 / n as f64).sqrt();
            Ok(Built {
                dataset: Dataset::from_scalars(&vals)?,
                model: Model::new(Loss::squared(), Reg::L1),
                lambda_star: Some(zbar),
                zbar: Some(zbar),
                description: format!("prop7: 1-D lasso, two atoms, n = {n}"),
            })
        }
        Case::Fig1a => {
            let mean = [1.3893 / (n as f64).sqrt(), 1.5 / (n as f64).sqrt()];
            let dataset = spike_cloud(n, &mean)?;
            let weight = nalgebra::DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 40.0]));
            Ok(Built {
                dataset,
                model: Model::new(
                    Loss::Quadratic {
                        scale: 1.0,
                        weight: Some(weight),
                    },
                    Reg::Ridge { scale: 1.0 },
                ),
                lambda_star: None,
                zbar: None,
                description: format!("fig1a: 2-D anisotropic quadratic + ridge, n = {n}"),
            })
        }
        Case::Fig1b => {
            let rn = (n as f64).sqrt();
            let mean = [
                (1.0f64 / 8.0).sqrt() / rn,
                (9.0f64 / 8.0).sqrt() / rn,
                2.0 / rn,
            ];
            let dataset = spike_cloud(n, &mean)?;
            Ok(Built {
                dataset,
                model: Model::new(Loss::squared(), Reg::L1),
                lambda_star: None,
                zbar: None,
                description: format!("fig1b: 3-D quadratic + l1, n = {n}"),
            })
        }
    }
}

/// Closed-form reference gap for the failure-mode instances, as printed:
/// - prop5: `(n/(4(n-1)²))(1 - 4/√(nπ) + 2/n)` for the support-restricted IJ
///   vs exact CV at λ = z̄;
/// - prop6: `δ√(2/π)/n`, the leading order only;
/// - prop7: `5/(2n²)` for `ProxACV(0) - ProxACV(z̄)`.
pub fn reference_gap(case: Case, n: usize) -> Result<f64> {
    let nf = n as f64;
    match case {
        Case::Prop5 => {
            Ok(nf / (4.0 * (nf - 1.0).powi(2))
                * (1.0 - 4.0 / (nf * std::f64::consts::PI).sqrt() + 2.0 / nf))
        }
        Case::Prop6 { delta } => Ok(delta * (2.0 / std::f64::consts::PI).sqrt() / nf),
        Case::Prop7 => Ok(5.0 / (2.0 * nf * nf)),
        Case::Fig1a | Case::Fig1b => Err(Error::InvalidCase(
            "no closed-form gap for the curve-shape instances".into(),
        )),
    }
}

/// `β̂(0) - β̂(z̄) = √(2/n)` on the prop7 instance.
pub fn prop7_estimator_gap(n: usize) -> f64 {
    (2.0 / n as f64).sqrt()
}
