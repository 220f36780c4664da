//! Exact cross-validation over configurable fold schemes.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Lambda, Weights};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::solver::{fit_erm, FitResult, SolverConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum FoldKind {
    LeaveOneOut,
    KFold { k: usize },
    LeavePairOut,
}

/// Held-out index sets. Leave-one-out and k-fold partition the points;
/// leave-pair-out enumerates all pairs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldScheme {
    pub kind: FoldKind,
    pub folds: Vec<Vec<usize>>,
}

/// Build the fold scheme. k-fold assignment is sequential and the last fold
/// absorbs the remainder.
pub fn make_folds(n: usize, kind: FoldKind) -> Result<FoldScheme> {
    if n < 2 {
        return Err(Error::InvalidFolds(format!("need n >= 2, got {n}")));
    }
    let folds = match kind {
        FoldKind::LeaveOneOut => (0..n).map(|i| vec![i]).collect(),
        FoldKind::KFold { k } => {
            if k < 2 || k > n {
                return Err(Error::InvalidFolds(format!(
                    "k-fold requires 2 <= k <= n, got k = {k}, n = {n}"
                )));
            }
            let base = n / k;
            let mut folds: Vec<Vec<usize>> = Vec::with_capacity(k);
            let mut start = 0;
            for j in 0..k {
                let end = if j + 1 == k { n } else { start + base };
                folds.push((start..end).collect());
                start = end;
            }
            folds
        }
        FoldKind::LeavePairOut => {
            let mut folds = Vec::with_capacity(n * (n - 1) / 2);
            for i in 0..n {
                for j in (i + 1)..n {
                    folds.push(vec![i, j]);
                }
            }
            folds
        }
    };
    Ok(FoldScheme { kind, folds })
}

#[derive(Debug, Clone)]
pub struct CvResult {
    pub lambda: Lambda,
    /// Per-fold estimators, in fold order.
    pub fold_fits: Vec<FitResult>,
    /// Per-fold held-out losses (mean over the held-out set).
    pub heldout: Vec<f64>,
    pub cv_value: f64,
}

/// Exact cross-validation: fit every fold's objective and average the
/// held-out losses in fold-index order.
///
/// Fold fits warm-start from the full-data estimator by default; pass it via
/// `full_fit` to avoid refitting (it is computed here otherwise).
pub fn exact_cv(
    model: &Model,
    data: &Dataset,
    lambda: Lambda,
    scheme: &FoldScheme,
    cfg: &SolverConfig,
    full_fit: Option<&FitResult>,
) -> Result<CvResult> {
    let n = data.n();
    let warm_owned;
    let warm: Option<&DVector<f64>> = if cfg.warm_start {
        match full_fit {
            Some(f) => Some(&f.beta),
            None => {
                warm_owned = fit_erm(model, data, &Weights::full(n), lambda, cfg, None)?;
                Some(&warm_owned.beta)
            }
        }
    } else {
        None
    };

    let fold_fits: Vec<FitResult> = scheme
        .folds
        .par_iter()
        .enumerate()
        .map(|(fold, held)| {
            let w = Weights::leave_set(n, held);
            let fit = fit_erm(model, data, &w, lambda, cfg, warm).map_err(|e| {
                Error::FoldFitFailed {
                    fold,
                    source: Box::new(e),
                }
            })?;
            if !fit.converged {
                return Err(Error::FoldFitFailed {
                    fold,
                    source: Box::new(Error::NonConvergence {
                        context: "fold fit".into(),
                        residual: fit.residual,
                        iterations: fit.iterations,
                    }),
                });
            }
            Ok(fit)
        })
        .collect::<Result<Vec<_>>>()?;

    // deterministic aggregation in fold-index order
    let heldout: Vec<f64> = fold_fits
        .iter()
        .zip(&scheme.folds)
        .map(|(fit, held)| {
            held.iter()
                .map(|&i| model.heldout_loss(data, i, &fit.beta))
                .sum::<f64>()
                / held.len() as f64
        })
        .collect();
    let cv_value = heldout.iter().sum::<f64>() / heldout.len() as f64;

    Ok(CvResult {
        lambda,
        fold_fits,
        heldout,
        cv_value,
    })
}
