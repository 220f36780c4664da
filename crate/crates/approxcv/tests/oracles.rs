//! Independent-oracle checks: finite differences for every derivative oracle,
//! grid-search minimizers for the solvers, and the moment-bound inequality.

use approxcv::dataset::{Dataset, Lambda, Weights};
use approxcv::model::{analytic_constants, CustomLoss, Link, Loss, Model, Reg};
use approxcv::solver::{fit_erm, SolverConfig};
use approxcv::{bounds, synthetic};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

fn rng(seed: u64) -> ChaCha8Rng {
    use rand::SeedableRng;
    ChaCha8Rng::seed_from_u64(seed)
}

fn rand_vec(r: &mut ChaCha8Rng, d: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(d, |_, _| (rand::Rng::gen::<f64>(r) - 0.5) * 2.0 * scale)
}

/// Central-difference gradient of a scalar function.
fn fd_grad(f: &dyn Fn(&DVector<f64>) -> f64, x: &DVector<f64>, h: f64) -> DVector<f64> {
    DVector::from_fn(x.len(), |j, _| {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += h;
        xm[j] -= h;
        (f(&xp) - f(&xm)) / (2.0 * h)
    })
}

fn check_loss_derivatives(loss: &Loss, z: &DVector<f64>, probes: usize, seed: u64) {
    let mut r = rng(seed);
    let d = loss.param_dim(z.len());
    for _ in 0..probes {
        let beta = rand_vec(&mut r, d, 1.5);
        // gradient vs central differences of the value
        let g = loss.grad(z, &beta);
        let g_fd = fd_grad(&|b| loss.value(z, b), &beta, 1e-6);
        let denom = 1.0 + g.norm();
        assert!(
            (g.clone() - &g_fd).norm() / denom < 1e-6,
            "gradient mismatch: {:?} vs {:?}",
            g,
            g_fd
        );
        // Hessian vs finite differences of the gradient
        let hess = loss.hess(z, &beta);
        for j in 0..d {
            let mut bp = beta.clone();
            let mut bm = beta.clone();
            bp[j] += 1e-5;
            bm[j] -= 1e-5;
            let col = (loss.grad(z, &bp) - loss.grad(z, &bm)) / 2e-5;
            let denom = 1.0 + hess.column(j).norm();
            assert!((hess.column(j) - col).norm() / denom < 1e-5);
        }
        // third directional contraction vs differences of the Hessian-vector map
        let v = rand_vec(&mut r, d, 1.0);
        let t = loss.third_vv(z, &beta, &v).unwrap();
        let h = 1e-5;
        let hp = loss.hess(z, &(&beta + &v * h)) * &v;
        let hm = loss.hess(z, &(&beta - &v * h)) * &v;
        let t_fd = (hp - hm) / (2.0 * h);
        let denom = 1.0 + t.norm();
        assert!(
            (t.clone() - &t_fd).norm() / denom < 1e-4,
            "third contraction mismatch"
        );
    }
}

#[test]
fn quadratic_derivatives_match_finite_differences() {
    let z = DVector::from_vec(vec![0.4, -1.1, 0.7]);
    check_loss_derivatives(&Loss::squared(), &z, 100, 1);
    let w = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.0, 0.3, 1.5, -0.2, 0.0, -0.2, 1.0]);
    check_loss_derivatives(
        &Loss::Quadratic {
            scale: 1.0,
            weight: Some(w),
        },
        &z,
        100,
        2,
    );
}

#[test]
fn logistic_derivatives_match_finite_differences() {
    for y in [0.0, 1.0] {
        let z = DVector::from_vec(vec![0.8, -0.5, 1.2, y]);
        check_loss_derivatives(&Loss::logistic(), &z, 100, 3);
    }
}

#[test]
fn exponential_derivatives_match_finite_differences() {
    for y in [0.0, 1.0] {
        let z = DVector::from_vec(vec![0.3, -0.4, y]);
        check_loss_derivatives(
            &Loss::Glm {
                link: Link::Exponential,
            },
            &z,
            100,
            4,
        );
    }
}

#[test]
fn custom_loss_roundtrip() {
    // pseudo-huber-flavored scalar loss wired through the custom interface
    let value = |z: &DVector<f64>, b: &DVector<f64>| ((b[0] - z[0]).powi(2) + 1.0).sqrt() - 1.0;
    let grad = |z: &DVector<f64>, b: &DVector<f64>| {
        let r: f64 = b[0] - z[0];
        DVector::from_vec(vec![r / (r * r + 1.0).sqrt()])
    };
    let hess = |z: &DVector<f64>, b: &DVector<f64>| {
        let r: f64 = b[0] - z[0];
        DMatrix::from_vec(1, 1, vec![(r * r + 1.0).powf(-1.5)])
    };
    let custom = Loss::Custom(Arc::new(CustomLoss {
        value: Arc::new(value),
        grad: Arc::new(grad),
        hess: Arc::new(hess),
        third_vv: None,
        third_mat: None,
        lipschitz: None,
        hess_bound: None,
        hess_lipschitz: None,
        third_lipschitz: None,
    }));
    let z = DVector::from_vec(vec![0.7]);
    let mut r = rng(9);
    for _ in 0..100 {
        let beta = rand_vec(&mut r, 1, 2.0);
        let g = custom.grad(&z, &beta);
        let g_fd = fd_grad(&|b| custom.value(&z, b), &beta, 1e-6);
        assert!((g - g_fd).norm() < 1e-6);
    }
    // fits run through the same machinery
    let data = Dataset::from_scalars(&[0.2, 0.9, 0.5]).unwrap();
    let model = Model::new(custom, Reg::Ridge { scale: 0.5 });
    let fit = fit_erm(
        &model,
        &data,
        &Weights::full(3),
        Lambda::Finite(0.1),
        &SolverConfig::default(),
        None,
    )
    .unwrap();
    assert!(fit.converged);
}

#[test]
fn regularizer_derivatives_match_finite_differences() {
    let mut r = rng(5);
    for reg in [
        Reg::Ridge { scale: 1.0 },
        Reg::Ridge { scale: 0.5 },
        Reg::PseudoHuber { delta: 0.4 },
    ] {
        for _ in 0..100 {
            let beta = rand_vec(&mut r, 3, 1.2);
            let g = reg.grad(&beta).unwrap();
            let g_fd = fd_grad(&|b| reg.value(b), &beta, 1e-6);
            assert!((g - g_fd).norm() < 1e-5 * (1.0 + reg.value(&beta)));
            let h = reg.hess(&beta).unwrap();
            for j in 0..3 {
                let mut bp = beta.clone();
                let mut bm = beta.clone();
                bp[j] += 1e-5;
                bm[j] -= 1e-5;
                let col = (reg.grad(&bp).unwrap() - reg.grad(&bm).unwrap()) / 2e-5;
                assert!((h.column(j) - col).norm() < 1e-5 * (1.0 + h.column(j).norm()));
            }
            let v = rand_vec(&mut r, 3, 1.0);
            let t = reg.third_vv(&beta, &v).unwrap();
            let hp = reg.hess(&(&beta + &v * 1e-5)).unwrap() * &v;
            let hm = reg.hess(&(&beta - &v * 1e-5)).unwrap() * &v;
            let t_fd = (hp - hm) / 2e-5;
            assert!((t - t_fd).norm() < 1e-4 * (1.0 + 1.0));
        }
    }
}

#[test]
fn ridge_estimator_shrinks_toward_infinite_penalty_limit() {
    // ‖β̂(10^k)‖ decreasing in k and within ε of ‖β̂(∞)‖ = 0 for large k
    let data = synthetic::gaussian_dataset(30, 3, &[0.4, -0.2, 0.7], 11).unwrap();
    let model = Model::new(Loss::squared(), Reg::Ridge { scale: 1.0 });
    let cfg = SolverConfig::default();
    let mut prev = f64::INFINITY;
    let mut last = f64::NAN;
    for k in -2..=6 {
        let lam = 10f64.powi(k);
        let fit = fit_erm(&model, &data, &Weights::full(30), Lambda::Finite(lam), &cfg, None)
            .unwrap();
        let norm = fit.beta.norm();
        assert!(norm <= prev + 1e-12, "norm not decreasing at 10^{k}");
        prev = norm;
        last = norm;
    }
    let inf_fit = fit_erm(
        &model,
        &data,
        &Weights::full(30),
        Lambda::Infinite,
        &cfg,
        None,
    )
    .unwrap();
    assert!(last <= inf_fit.beta.norm() + 1e-4);
}

#[test]
fn grid_sup_moment_is_below_sufficient_bound() {
    let data = synthetic::logistic_dataset(40, 4, 2, false, 21).unwrap();
    let model = Model::new(Loss::logistic(), Reg::Ridge { scale: 1.0 });
    let cfg = SolverConfig::default();
    let grid: Vec<f64> = (0..8).map(|k| 10f64.powf(-2.0 + 0.5 * k as f64)).collect();
    let mut fits = Vec::new();
    let mut warm = None;
    for &lam in &grid {
        let f = fit_erm(
            &model,
            &data,
            &Weights::full(40),
            Lambda::Finite(lam),
            &cfg,
            warm.as_ref(),
        )
        .unwrap();
        warm = Some(f.beta.clone());
        fits.push(f);
    }
    let cs = approxcv::model::constants_with_fits(&model, &data, &grid, &fits, &cfg).unwrap();
    for (s, r) in [(0u32, 2u32), (0, 3), (1, 2), (1, 3), (1, 4), (2, 2), (3, 2)] {
        let grid_sup = bounds::moment_bound(&model, &data, s, r, &grid, &fits, &cs)
            .unwrap()
            .value;
        let sufficient = bounds::moment_bound_sufficient(&model, &data, s, r, &cs)
            .unwrap()
            .value;
        assert!(
            grid_sup <= sufficient + 1e-12,
            "M_({s},{r}): grid {grid_sup} vs sufficient {sufficient}"
        );
    }
}

#[test]
fn analytic_constants_rejects_exponential_loss_moments() {
    let data = synthetic::logistic_dataset(20, 3, 2, false, 31).unwrap();
    let model = Model::new(
        Loss::Glm {
            link: Link::Exponential,
        },
        Reg::Ridge { scale: 1.0 },
    );
    let cs = analytic_constants(&model, &data, &[0.5], &SolverConfig::default()).unwrap();
    assert!(cs.l_i.is_none());
    // unbounded-derivative losses cannot feed s > 0 moments
    let fit = fit_erm(
        &model,
        &data,
        &Weights::full(20),
        Lambda::Finite(0.5),
        &SolverConfig::default(),
        None,
    )
    .unwrap();
    assert!(bounds::moment_bound(&model, &data, 1, 2, &[0.5], &[fit], &cs).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn prox_1d_minimizes_its_objective(
        h in 0.2f64..3.0,
        c in -2.0f64..2.0,
        lam in 0.0f64..1.5,
        which in 0usize..4,
    ) {
        let reg = match which {
            0 => Reg::L1,
            1 => Reg::Ridge { scale: 0.7 },
            2 => Reg::ElasticNet { l1: 0.6, l2: 0.4 },
            _ => Reg::PatchedLasso { delta: 0.3 },
        };
        let t = reg.prox_1d(h, c, lam);
        let obj = |x: f64| 0.5 * h * (x - c) * (x - c)
            + lam * reg.value(&DVector::from_vec(vec![x]));
        let v = obj(t);
        for dx in [-1e-4, 1e-4, -1e-2, 1e-2, -0.5, 0.5] {
            prop_assert!(v <= obj(t + dx) + 1e-12);
        }
    }

    #[test]
    fn quadratic_ridge_acv_equals_cv_on_random_instances(seed in 0u64..20) {
        let data = synthetic::gaussian_dataset(12, 2, &[0.3, -0.1], seed).unwrap();
        let model = Model::new(Loss::squared(), Reg::Ridge { scale: 1.0 });
        let cfg = SolverConfig::default();
        let scheme = approxcv::make_folds(12, approxcv::FoldKind::LeaveOneOut).unwrap();
        let lam = 0.1 + seed as f64 * 0.05;
        let fit = fit_erm(&model, &data, &Weights::full(12), Lambda::Finite(lam), &cfg, None).unwrap();
        let cv = approxcv::exact_cv(&model, &data, Lambda::Finite(lam), &scheme, &cfg, Some(&fit)).unwrap();
        let a = approxcv::acv(&model, &data, lam, &fit).unwrap();
        prop_assert!((a.value - cv.cv_value).abs() < 1e-10);
    }
}
