//! Exact and approximate cross-validation for regularized empirical risk
//! minimization, with machine-checkable assessment and selection certificates.
//!
//! The crate fits `argmin_β Σ w_i ℓ(z_i, β) + λ π(β)`, evaluates exact
//! leave-one-out / k-fold CV, several Newton-step and proximal-Newton
//! approximations to it (plain, infinitesimal-jackknife, higher-order, and
//! support-restricted variants), and checks deterministic error bounds on the
//! approximation and selection quality, emitting the results as certificates.

pub mod acv;
pub mod bounds;
pub mod counterexamples;
pub mod cv;
pub mod dataset;
pub mod error;
pub mod lemmas;
pub mod linalg;
pub mod model;
pub mod proxacv;
pub mod solver;
pub mod synthetic;

pub use acv::{acv, acv_ij, acv_p, acv_support_restricted, ApproxResult, Method};
pub use cv::{exact_cv, make_folds, CvResult, FoldKind, FoldScheme};
pub use dataset::{Dataset, Lambda, Weights};
pub use error::{Error, Result};
pub use model::{analytic_constants, ConstantSet, Link, Loss, Model, ObjectiveEval, Reg};
pub use proxacv::{proxacv, proxacv_ij, proxacv_p};
pub use solver::{fit_erm, generalized_prox, newton_step, prox_newton_step, FitResult, SolverConfig};
