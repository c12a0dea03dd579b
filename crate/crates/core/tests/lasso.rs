use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sou_core::lasso::{kkt_violation, lambda_max, lasso_cd, lasso_cv_fit, lasso_objective, LassoConfig};
use sou_core::Error;

fn gaussian(n: usize, p: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(rng))
}

fn noise(n: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_fn(n, |_, _| StandardNormal.sample(rng))
}

/// Minimum over all sign patterns of the restricted stationary points that
/// keep their assumed signs.
fn sign_pattern_oracle(x: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> DVector<f64> {
    let (n, p) = x.shape();
    let nf = n as f64;
    let mut best = (f64::INFINITY, DVector::zeros(p));
    for code in 0..3usize.pow(p as u32) {
        let signs: Vec<f64> = (0..p).map(|j| (code / 3usize.pow(j as u32) % 3) as f64 - 1.0).collect();
        let active: Vec<usize> = (0..p).filter(|&j| signs[j] != 0.0).collect();
        let mut beta = DVector::zeros(p);
        if !active.is_empty() {
            let xa = x.select_columns(&active);
            let g = xa.transpose() * &xa / nf;
            let rhs = xa.transpose() * y / nf
                - DVector::from_iterator(active.len(), active.iter().map(|&j| lambda * signs[j]));
            let Some(sol) = g.lu().solve(&rhs) else { continue };
            if active.iter().zip(sol.iter()).any(|(&j, &b)| b * signs[j] <= 0.0) {
                continue;
            }
            for (k, &j) in active.iter().enumerate() {
                beta[j] = sol[k];
            }
        }
        let obj = lasso_objective(x, y, &beta, lambda);
        if obj < best.0 {
            best = (obj, beta);
        }
    }
    best.1
}

#[test]
fn zero_penalty_gives_least_squares() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = gaussian(30, 4, &mut rng);
    let y = noise(30, &mut rng);
    let fit = lasso_cd(&x, &y, 0.0, None, 1e-12, 100_000).unwrap();
    let ols = (x.transpose() * &x).cholesky().unwrap().solve(&(x.transpose() * &y));
    assert!((fit.beta - ols).amax() < 1e-6);
}

#[test]
fn penalty_above_threshold_gives_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = gaussian(20, 6, &mut rng);
    let y = noise(20, &mut rng);
    let lm = lambda_max(&x, &y);
    for lambda in [lm, 1.5 * lm] {
        let fit = lasso_cd(&x, &y, lambda, None, 1e-9, 100).unwrap();
        assert!(fit.beta.iter().all(|&b| b == 0.0));
    }
    let just_below = lasso_cd(&x, &y, 0.99 * lm, None, 1e-9, 100_000).unwrap();
    assert!(just_below.beta.iter().any(|&b| b != 0.0));
}

#[test]
fn toy_instance_matches_sign_pattern_enumeration() {
    let x = DMatrix::from_row_slice(3, 2, &[1.0, 0.5, -0.3, 2.0, 0.8, -1.1]);
    let y = DVector::from_vec(vec![1.2, -0.7, 2.1]);
    let lm = lambda_max(&x, &y);
    for frac in [0.0, 0.05, 0.2, 0.5, 0.8, 1.2] {
        let lambda = frac * lm;
        let fit = lasso_cd(&x, &y, lambda, None, 1e-14, 1_000_000).unwrap();
        let oracle = sign_pattern_oracle(&x, &y, lambda);
        assert!((&fit.beta - &oracle).amax() < 1e-8, "λ = {lambda}: {} vs {}", fit.beta, oracle);
    }
}

#[test]
fn near_square_design_converges_along_every_fold_path() {
    for seed in 0..40 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let x = gaussian(25, 20, &mut rng);
        let y = noise(25, &mut rng);
        let fit = lasso_cv_fit(&x, &y, &LassoConfig::default(), seed).unwrap();
        assert!(kkt_violation(&x, &y, &fit.beta, fit.lambda) <= 1e-6);
    }
}

#[test]
fn kkt_conditions_hold_at_solution() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = gaussian(25, 20, &mut rng);
    let y = noise(25, &mut rng);
    let lm = lambda_max(&x, &y);
    for frac in [0.5, 0.1, 0.01] {
        let fit = lasso_cd(&x, &y, frac * lm, None, 1e-9, 100_000).unwrap();
        assert!(kkt_violation(&x, &y, &fit.beta, frac * lm) <= 1e-6);
    }
}

#[test]
fn pass_cap_reports_non_convergence() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = gaussian(25, 20, &mut rng);
    let y = noise(25, &mut rng);
    match lasso_cd(&x, &y, 1e-3, None, 1e-12, 2) {
        Err(Error::CdNonConvergence { iterations, max_change }) => {
            assert_eq!(iterations, 2);
            assert!(max_change > 1e-12);
        }
        other => panic!("expected non-convergence, got {other:?}"),
    }
}

#[test]
fn invalid_inputs_are_rejected() {
    let x = DMatrix::from_element(3, 2, 1.0);
    let y = DVector::from_element(3, 1.0);
    assert!(lasso_cd(&x, &y, -1.0, None, 1e-9, 10).is_err());
    assert!(lasso_cd(&x, &DVector::from_element(2, 1.0), 0.1, None, 1e-9, 10).is_err());
    let mut bad = x.clone();
    bad[(0, 0)] = f64::NAN;
    assert!(lasso_cd(&bad, &y, 0.1, None, 1e-9, 10).is_err());
    assert!(lasso_cv_fit(&x, &y, &LassoConfig::default(), 0).is_err());
}

#[test]
fn pure_noise_selects_near_zero_coefficients() {
    let mut hits = 0;
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let x = gaussian(100, 20, &mut rng);
        let y = noise(100, &mut rng);
        let fit = lasso_cv_fit(&x, &y, &LassoConfig::default(), seed).unwrap();
        if fit.beta.amax() < 0.2 {
            hits += 1;
        }
    }
    assert!(hits >= 95, "{hits} of 100 near zero");
}

#[test]
fn strong_signal_is_close_to_least_squares() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (n, p) = (400, 5);
    let x = gaussian(n, p, &mut rng);
    let beta = DVector::from_vec(vec![3.0, -2.0, 4.0, 1.5, -3.5]);
    let y = &x * &beta + noise(n, &mut rng);
    let fit = lasso_cv_fit(&x, &y, &LassoConfig::default(), 9).unwrap();
    let ols = (x.transpose() * &x).cholesky().unwrap().solve(&(x.transpose() * &y));
    let rmse = |b: &DVector<f64>| ((b - &beta).norm_squared() / p as f64).sqrt();
    assert!(rmse(&fit.beta) < 1.5 * rmse(&ols), "{} vs {}", rmse(&fit.beta), rmse(&ols));
}

#[test]
fn cv_fit_is_deterministic_given_seed() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = gaussian(40, 8, &mut rng);
    let y = &x.column(0) * 2.0 + noise(40, &mut rng);
    let a = lasso_cv_fit(&x, &y, &LassoConfig::default(), 11).unwrap();
    let b = lasso_cv_fit(&x, &y, &LassoConfig::default(), 11).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.cv_curve.len(), 100);
    assert!(a.cv_curve.iter().any(|c| c.lambda == a.lambda));
    let best = a.cv_curve.iter().map(|c| c.mean_mse).fold(f64::INFINITY, f64::min);
    assert!(a.cv_curve.iter().find(|c| c.lambda == a.lambda).unwrap().mean_mse == best);
}

#[test]
fn standardised_fit_returns_original_scale() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (n, p) = (300, 3);
    let mut x = gaussian(n, p, &mut rng);
    for i in 0..n {
        x[(i, 0)] = 10.0 * x[(i, 0)] + 5.0;
        x[(i, 2)] = 0.1 * x[(i, 2)] - 2.0;
    }
    let beta = DVector::from_vec(vec![0.3, -2.0, 20.0]);
    let y = (&x * &beta).add_scalar(1.5) + noise(n, &mut rng) * 0.1;
    let cfg = LassoConfig { standardise: true, ..Default::default() };
    let fit = lasso_cv_fit(&x, &y, &cfg, 3).unwrap();
    assert!((&fit.beta - &beta).amax() < 0.1 * 20.0 * 0.1 + 0.05, "{}", fit.beta);
    assert!((fit.intercept - 1.5).abs() < 0.3, "{}", fit.intercept);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn objective_is_non_increasing_over_passes(seed in 0u64..10_000, frac in 0.01f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = gaussian(15, 8, &mut rng);
        let y = noise(15, &mut rng);
        let lambda = frac * lambda_max(&x, &y);
        let mut beta = DVector::zeros(8);
        let mut last = lasso_objective(&x, &y, &beta, lambda);
        for _ in 0..30 {
            beta = lasso_cd(&x, &y, lambda, Some(&beta), f64::INFINITY, 1).unwrap().beta;
            let obj = lasso_objective(&x, &y, &beta, lambda);
            prop_assert!(obj <= last + 1e-12 * last.abs().max(1.0));
            last = obj;
        }
    }
}
