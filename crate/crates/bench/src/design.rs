//! Simulated designs: repeated coefficient blocks, heavy-tailed sparse
//! coefficients, Gaussian regression data, sparse Normal means and a
//! logistic classification problem.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, StandardNormal, StudentT};
use sou_core::linreg::RegressionData;
use sou_core::logreg::ClassificationData;
use sou_core::normal_means::NormalMeansData;
use sou_core::special::sigmoid;

use crate::error::{BenchError, Result};

pub const TABLE1_BLOCK: [f64; 10] = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0];
pub const TABLE_S1_BLOCK: [f64; 10] = [2.0, 2.0, 2.0, 2.0, 2.0, 2.0, 2.0, 2.0, 5.0, 20.0];

// ChaCha stream for coefficient draws; X and ε use stream 0.
const COEF_STREAM: u64 = 1;

/// `block` repeated until `s` entries are placed, then zeros up to `p`.
pub fn make_beta(s: usize, p: usize, block: &[f64]) -> Result<DVector<f64>> {
    if s > p {
        return Err(BenchError::Config(format!("s = {s} exceeds p = {p}")));
    }
    if s > 0 && block.is_empty() {
        return Err(BenchError::Config("coefficient block is empty".into()));
    }
    Ok(DVector::from_fn(p, |j, _| if j < s { block[j % block.len()] } else { 0.0 }))
}

/// β_j = Z_j T_j with Z_j ~ Bernoulli(ρ) and T_j ~ t₂.
pub fn simulate_t2_beta(p: usize, rho: f64, seed: u64) -> Result<DVector<f64>> {
    let z = Bernoulli::new(rho).map_err(|_| BenchError::Config(format!("rho must lie in [0, 1], got {rho}")))?;
    let t = StudentT::new(2.0).expect("two degrees of freedom");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(COEF_STREAM);
    Ok(DVector::from_fn(p, |_, _| {
        let keep = z.sample(&mut rng);
        let draw: f64 = t.sample(&mut rng);
        if keep {
            draw
        } else {
            0.0
        }
    }))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimOptions {
    pub noise_sd: f64,
    /// Rows of an independent test set from the same design.
    pub n_test: usize,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions { noise_sd: 1.0, n_test: 0 }
    }
}

pub struct SimulatedRegression {
    pub data: RegressionData,
    pub beta: DVector<f64>,
    pub x_test: DMatrix<f64>,
    pub y_test: DVector<f64>,
}

fn gaussian_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    // row-major draw order
    DMatrix::from_row_iterator(rows, cols, (0..rows * cols).map(|_| StandardNormal.sample(rng)))
}

/// X with i.i.d. N(0, 1) entries and y = Xβ + ε, ε ~ N(0, `noise_sd`²).
/// The training rows are drawn before the test rows.
pub fn simulate_regression(beta: DVector<f64>, n: usize, seed: u64, opts: &SimOptions) -> Result<SimulatedRegression> {
    let p = beta.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |rows: usize| {
        let x = gaussian_matrix(rows, p, &mut rng);
        let noise = DVector::from_fn(rows, |_, _| opts.noise_sd * rng.sample::<f64, _>(StandardNormal));
        let y = &x * &beta + noise;
        (x, y)
    };
    let (x, y) = draw(n);
    let (x_test, y_test) = draw(opts.n_test);
    Ok(SimulatedRegression { data: RegressionData::new(x, y, false)?, beta, x_test, y_test })
}

pub fn simulate_linreg(
    n: usize,
    p: usize,
    s: usize,
    block: &[f64],
    seed: u64,
    opts: &SimOptions,
) -> Result<SimulatedRegression> {
    simulate_regression(make_beta(s, p, block)?, n, seed, opts)
}

/// `coords` means, the first `signals` equal to `signal` and the rest zero,
/// each observed `obs` times with unit noise.
pub fn simulate_normal_means(
    coords: usize,
    obs: usize,
    signals: usize,
    signal: f64,
    seed: u64,
) -> Result<NormalMeansData> {
    if signals > coords {
        return Err(BenchError::Config(format!("{signals} signals for {coords} coordinates")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let y: Vec<Vec<f64>> = (0..coords)
        .map(|i| {
            let beta = if i < signals { signal } else { 0.0 };
            (0..obs).map(|_| beta + rng.sample::<f64, _>(StandardNormal)).collect()
        })
        .collect();
    Ok(NormalMeansData::new(&y)?)
}

pub struct SimulatedClassification {
    pub data: ClassificationData,
    pub beta: DVector<f64>,
    pub x_test: DMatrix<f64>,
    pub y_test: DVector<f64>,
}

/// Logistic model without intercept: `signals` coefficients of alternating
/// sign and size `magnitude`, the rest zero; labels y ~ Bernoulli(σ(xᵀβ)).
/// The fit includes an intercept.
pub fn simulate_logistic(
    n: usize,
    p: usize,
    signals: usize,
    magnitude: f64,
    n_test: usize,
    seed: u64,
) -> Result<SimulatedClassification> {
    if signals > p {
        return Err(BenchError::Config(format!("{signals} signals for {p} columns")));
    }
    let beta = DVector::from_fn(p, |j, _| match (j < signals, j % 2) {
        (false, _) => 0.0,
        (true, 0) => magnitude,
        (true, _) => -magnitude,
    });
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |rows: usize| {
        let x = gaussian_matrix(rows, p, &mut rng);
        let eta = &x * &beta;
        let y = DVector::from_fn(rows, |i, _| if rng.random::<f64>() < sigmoid(eta[i]) { 1.0 } else { 0.0 });
        (x, y)
    };
    let (x, y) = draw(n);
    let (x_test, y_test) = draw(n_test);
    Ok(SimulatedClassification { data: ClassificationData::new(x, y, true)?, beta, x_test, y_test })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table1_block_layout() {
        let b = make_beta(10, 20, &TABLE1_BLOCK).unwrap();
        assert_eq!(b.as_slice()[..10], TABLE1_BLOCK);
        assert!(b.as_slice()[10..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cyclic_repeat() {
        let b = make_beta(13, 20, &TABLE1_BLOCK).unwrap();
        assert_eq!(b.as_slice()[10..13], [1.0, 2.0, 3.0]);
        assert!(b.as_slice()[13..].iter().all(|&v| v == 0.0));
        assert!(make_beta(0, 5, &TABLE1_BLOCK).unwrap().iter().all(|&v| v == 0.0));
        assert!(make_beta(6, 5, &TABLE1_BLOCK).is_err());
    }

    #[test]
    fn t2_extremes() {
        assert!(simulate_t2_beta(50, 0.0, 3).unwrap().iter().all(|&v| v == 0.0));
        assert!(simulate_t2_beta(50, 1.0, 3).unwrap().iter().filter(|&&v| v != 0.0).count() >= 49);
        assert!(simulate_t2_beta(50, 1.5, 3).is_err());
    }

    #[test]
    fn noiseless_response_is_exact() {
        let sim = simulate_linreg(30, 8, 8, &TABLE1_BLOCK, 4, &SimOptions { noise_sd: 0.0, n_test: 0 }).unwrap();
        let fit = sim.data.x() * &sim.beta;
        assert_eq!(&fit, sim.data.y());
    }

    #[test]
    fn test_set_does_not_perturb_training_rows() {
        let a = simulate_linreg(20, 5, 3, &TABLE1_BLOCK, 9, &SimOptions::default()).unwrap();
        let b = simulate_linreg(20, 5, 3, &TABLE1_BLOCK, 9, &SimOptions { n_test: 50, ..Default::default() }).unwrap();
        assert_eq!(a.data, b.data);
        assert_eq!(b.x_test.nrows(), 50);
    }
}
