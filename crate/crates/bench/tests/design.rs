use proptest::prelude::*;
use sou_bench::design::{
    make_beta, simulate_linreg, simulate_logistic, simulate_normal_means, simulate_t2_beta, SimOptions,
};

#[test]
fn design_columns_are_standard_normal() {
    let n = 10_000;
    let sim = simulate_linreg(n, 4, 0, &[1.0], 5, &SimOptions::default()).unwrap();
    let x = sim.data.x();
    let bound = 4.0 / (n as f64).sqrt();
    for j in 0..4 {
        let col = x.column(j);
        let mean = col.mean();
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() < bound, "column {j} mean {mean}");
        assert!((var - 1.0).abs() < 8.0 / (n as f64).sqrt() * 2f64.sqrt(), "column {j} variance {var}");
    }
    // β = 0, so y is pure noise
    let y = sim.data.y();
    assert!(y.mean().abs() < bound);
}

#[test]
fn repeated_block_layout() {
    let b = make_beta(12, 15, &[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
    let expect = [1.0, 2.0, 3.0, 4.0, 5.0, 1.0, 2.0, 3.0, 4.0, 5.0, 1.0, 2.0, 0.0, 0.0, 0.0];
    assert_eq!(b.as_slice(), expect);
    assert!(make_beta(5, 4, &[1.0]).is_err());
    assert!(make_beta(2, 4, &[]).is_err());
}

#[test]
fn t2_inclusion_count() {
    let (p, rho) = (50, 0.3);
    let bound = 4.0 * (p as f64 * rho * (1.0 - rho)).sqrt();
    let mut total = 0.0;
    for seed in 0..200 {
        let b = simulate_t2_beta(p, rho, seed).unwrap();
        let nz = b.iter().filter(|v| **v != 0.0).count() as f64;
        assert!((nz - p as f64 * rho).abs() <= bound, "seed {seed}: {nz} non-zeros");
        total += nz;
    }
    assert!((total / 200.0 - p as f64 * rho).abs() < 1.0);
    assert!(simulate_t2_beta(5, 1.5, 0).is_err());
}

#[test]
fn test_rows_do_not_change_training_rows() {
    let a = simulate_linreg(30, 5, 2, &[1.0], 9, &SimOptions::default()).unwrap();
    let b = simulate_linreg(30, 5, 2, &[1.0], 9, &SimOptions { n_test: 50, ..Default::default() }).unwrap();
    assert_eq!(a.data.x(), b.data.x());
    assert_eq!(a.data.y(), b.data.y());
    assert_eq!(b.x_test.nrows(), 50);
}

#[test]
fn different_seeds_give_different_data() {
    let a = simulate_linreg(20, 3, 1, &[1.0], 1, &SimOptions::default()).unwrap();
    let b = simulate_linreg(20, 3, 1, &[1.0], 2, &SimOptions::default()).unwrap();
    assert_ne!(a.data.x(), b.data.x());
}

#[test]
fn normal_means_signals_sit_near_their_value() {
    let d = simulate_normal_means(100, 5, 20, 10.0, 3).unwrap();
    let bound = 4.5 / 5f64.sqrt();
    for (i, m) in d.means().iter().enumerate() {
        let truth = if i < 20 { 10.0 } else { 0.0 };
        assert!((m - truth).abs() < bound, "coordinate {i}: {m}");
    }
    assert!(simulate_normal_means(3, 5, 4, 1.0, 0).is_err());
}

#[test]
fn logistic_labels_follow_signal() {
    let sim = simulate_logistic(2000, 6, 2, 3.0, 0, 4).unwrap();
    assert_eq!(sim.beta.as_slice(), [3.0, -3.0, 0.0, 0.0, 0.0, 0.0]);
    let x = sim.data.x();
    let y = sim.data.y();
    let agree = (0..2000).filter(|&i| ((x[(i, 0)] - x[(i, 1)]) > 0.0) == (y[i] == 1.0)).count();
    assert!(agree > 1600, "{agree} of 2000 labels agree with the linear predictor sign");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn simulation_is_deterministic(seed in any::<u64>(), n in 2usize..15, p in 1usize..6) {
        let a = simulate_linreg(n, p, p / 2, &[2.0], seed, &SimOptions::default()).unwrap();
        let b = simulate_linreg(n, p, p / 2, &[2.0], seed, &SimOptions::default()).unwrap();
        prop_assert_eq!(a.data.x(), b.data.x());
        prop_assert_eq!(a.data.y(), b.data.y());
    }
}
