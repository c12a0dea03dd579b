//! Lasso by cyclic coordinate descent on (1/(2n))‖y − Xβ‖² + λ‖β‖₁, with a
//! K-fold cross-validated penalty.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LassoConfig {
    /// Descending penalties. Empty means the default log-spaced grid from
    /// λ_max down to `lambda_min_ratio`·λ_max.
    pub lambda_grid: Vec<f64>,
    pub n_lambda: usize,
    pub lambda_min_ratio: f64,
    pub folds: usize,
    pub cd_tol: f64,
    pub cd_max_iters: usize,
    /// Centre and scale columns (and centre y) before fitting; coefficients
    /// are returned on the original scale.
    pub standardise: bool,
}

impl Default for LassoConfig {
    fn default() -> Self {
        LassoConfig {
            lambda_grid: Vec::new(),
            n_lambda: 100,
            lambda_min_ratio: 1e-4,
            folds: 5,
            cd_tol: 1e-9,
            cd_max_iters: 100_000,
            standardise: false,
        }
    }
}

impl LassoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::InvalidProblem(format!("need at least 2 folds, got {}", self.folds)));
        }
        if self.lambda_grid.is_empty() {
            if self.n_lambda == 0 || !(self.lambda_min_ratio > 0.0 && self.lambda_min_ratio < 1.0) {
                return Err(Error::InvalidProblem("default grid needs n_lambda ≥ 1 and a ratio in (0, 1)".into()));
            }
        } else if self.lambda_grid.iter().any(|l| !(l.is_finite() && *l > 0.0))
            || self.lambda_grid.windows(2).any(|w| w[1] >= w[0])
        {
            return Err(Error::InvalidProblem("lambda grid must be positive and strictly descending".into()));
        }
        if self.cd_tol.is_nan() || self.cd_tol <= 0.0 || self.cd_max_iters == 0 {
            return Err(Error::InvalidProblem("coordinate-descent tolerance and cap must be positive".into()));
        }
        Ok(())
    }

    fn grid(&self, lambda_max: f64) -> Vec<f64> {
        if !self.lambda_grid.is_empty() {
            return self.lambda_grid.clone();
        }
        log_grid(lambda_max.max(f64::MIN_POSITIVE), self.lambda_min_ratio, self.n_lambda)
    }
}

/// `count` log-spaced values from `top` down to `ratio`·`top`.
pub fn log_grid(top: f64, ratio: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![top];
    }
    let step = ratio.ln() / (count - 1) as f64;
    (0..count).map(|k| top * (step * k as f64).exp()).collect()
}

/// ‖Xᵀy‖_∞ / n, the smallest penalty with an all-zero solution.
pub fn lambda_max(x: &DMatrix<f64>, y: &DVector<f64>) -> f64 {
    (x.transpose() * y).amax() / x.nrows() as f64
}

pub fn lasso_objective(x: &DMatrix<f64>, y: &DVector<f64>, beta: &DVector<f64>, lambda: f64) -> f64 {
    let r = y - x * beta;
    r.norm_squared() / (2.0 * x.nrows() as f64) + lambda * beta.lp_norm(1)
}

fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LassoFit {
    pub beta: DVector<f64>,
    pub passes: usize,
    pub max_change: f64,
}

const POLISH_EVERY: usize = 10;

/// Feature-sign steps on the current support: move toward the minimiser
/// with the current signs, stopping where the first coefficient reaches
/// zero and dropping it. Every step lowers the objective. Returns the new
/// point and whether it satisfies the optimality conditions to `tol`.
fn polish(x: &DMatrix<f64>, y: &DVector<f64>, lambda: f64, beta: &DVector<f64>, tol: f64) -> (DVector<f64>, bool) {
    let n = x.nrows() as f64;
    let mut b = beta.clone();
    for _ in 0..=beta.len() {
        let active: Vec<usize> = (0..b.len()).filter(|&j| b[j] != 0.0).collect();
        if active.is_empty() || active.len() > x.nrows() {
            break;
        }
        let xa = x.select_columns(&active);
        let rhs = xa.transpose() * y
            - DVector::from_iterator(active.len(), active.iter().map(|&j| n * lambda * b[j].signum()));
        let Some(chol) = (xa.transpose() * &xa).cholesky() else { break };
        let sol = chol.solve(&rhs);
        let crossing = active
            .iter()
            .zip(sol.iter())
            .filter(|(&j, &t)| t * b[j] <= 0.0)
            .map(|(&j, &t)| (b[j] / (b[j] - t), j))
            .min_by(|u, v| u.0.total_cmp(&v.0));
        match crossing {
            None => {
                for (k, &j) in active.iter().enumerate() {
                    b[j] = sol[k];
                }
                break;
            }
            Some((step, hit)) => {
                for (k, &j) in active.iter().enumerate() {
                    b[j] += step * (sol[k] - b[j]);
                }
                b[hit] = 0.0;
            }
        }
    }
    let ok = kkt_violation(x, y, &b, lambda) <= tol;
    (b, ok)
}

/// Coordinate descent from `start` (zeros when `None`) until no coefficient
/// moves by more than `tol` in a full pass, or until a polishing step from
/// the current support meets the optimality conditions.
pub fn lasso_cd(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    lambda: f64,
    start: Option<&DVector<f64>>,
    tol: f64,
    max_passes: usize,
) -> Result<LassoFit> {
    let (n, p) = x.shape();
    if y.len() != n {
        return Err(Error::Dimension(format!("response has length {}, design has {n} rows", y.len())));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidProblem(format!("lambda must be non-negative, got {lambda}")));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidProblem("inputs must be finite".into()));
    }
    let nf = n as f64;
    let mut beta = start.cloned().unwrap_or_else(|| DVector::zeros(p));
    if beta.len() != p {
        return Err(Error::Dimension(format!("start has length {}, expected {p}", beta.len())));
    }
    let scale: Vec<f64> = (0..p).map(|j| x.column(j).norm_squared() / nf).collect();
    let mut r = y - x * &beta;
    let mut max_change = f64::INFINITY;
    for pass in 1..=max_passes {
        max_change = 0.0;
        for j in 0..p {
            if scale[j] == 0.0 {
                beta[j] = 0.0;
                continue;
            }
            let col = x.column(j);
            let old = beta[j];
            let z = col.dot(&r) / nf + scale[j] * old;
            let new = soft_threshold(z, lambda) / scale[j];
            if new != old {
                r.axpy(old - new, &col, 1.0);
                beta[j] = new;
                max_change = max_change.max((new - old).abs());
            }
        }
        if max_change <= tol {
            return Ok(LassoFit { beta, passes: pass, max_change });
        }
        if pass % POLISH_EVERY == 0 {
            let (next, exact) = polish(x, y, lambda, &beta, tol);
            if next != beta {
                max_change = (&next - &beta).amax();
                r = y - x * &next;
                beta = next;
            }
            if exact {
                return Ok(LassoFit { beta, passes: pass, max_change });
            }
        }
    }
    Err(Error::CdNonConvergence { iterations: max_passes, max_change })
}

/// Largest violation of the optimality conditions: |g_j| ≤ λ on zero
/// coordinates and g_j = λ·sign(β_j) on active ones, with g = Xᵀr/n.
pub fn kkt_violation(x: &DMatrix<f64>, y: &DVector<f64>, beta: &DVector<f64>, lambda: f64) -> f64 {
    let g = x.transpose() * (y - x * beta) / x.nrows() as f64;
    (0..beta.len())
        .map(|j| if beta[j] == 0.0 { (g[j].abs() - lambda).max(0.0) } else { (g[j] - lambda * beta[j].signum()).abs() })
        .fold(0.0, f64::max)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvPoint {
    pub lambda: f64,
    pub mean_mse: f64,
    pub se_mse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LassoCvFit {
    pub beta: DVector<f64>,
    /// Intercept, non-zero only with standardisation.
    pub intercept: f64,
    pub lambda: f64,
    pub cv_curve: Vec<CvPoint>,
    pub folds: usize,
}

/// Fold label of each row from a seeded shuffle.
pub fn fold_assignment(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut label = vec![0; n];
    for (k, &i) in order.iter().enumerate() {
        label[i] = k % folds;
    }
    label
}

struct Standardised {
    x: DMatrix<f64>,
    y: DVector<f64>,
    x_mean: DVector<f64>,
    x_scale: DVector<f64>,
    y_mean: f64,
}

fn standardise(x: &DMatrix<f64>, y: &DVector<f64>) -> Standardised {
    let (n, p) = x.shape();
    let x_mean = DVector::from_fn(p, |j, _| x.column(j).mean());
    let x_scale = DVector::from_fn(p, |j, _| {
        let sd = (x.column(j).map(|v| (v - x_mean[j]).powi(2)).sum() / n as f64).sqrt();
        if sd > 0.0 {
            sd
        } else {
            1.0
        }
    });
    let xs = DMatrix::from_fn(n, p, |i, j| (x[(i, j)] - x_mean[j]) / x_scale[j]);
    let y_mean = y.mean();
    Standardised { x: xs, y: y.add_scalar(-y_mean), x_mean, x_scale, y_mean }
}

fn path(x: &DMatrix<f64>, y: &DVector<f64>, grid: &[f64], cfg: &LassoConfig) -> Result<Vec<DVector<f64>>> {
    let mut out: Vec<DVector<f64>> = Vec::with_capacity(grid.len());
    for &lambda in grid {
        let fit = lasso_cd(x, y, lambda, out.last(), cfg.cd_tol, cfg.cd_max_iters)?;
        out.push(fit.beta);
    }
    Ok(out)
}

fn rows(x: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), x.ncols(), |i, j| x[(idx[i], j)])
}

/// K-fold cross-validation over the grid with warm starts along each path.
/// The penalty with the smallest mean validation MSE is refitted on all
/// rows.
pub fn lasso_cv_fit(x: &DMatrix<f64>, y: &DVector<f64>, cfg: &LassoConfig, seed: u64) -> Result<LassoCvFit> {
    cfg.validate()?;
    let n = x.nrows();
    if n < cfg.folds {
        return Err(Error::InvalidProblem(format!("{n} rows cannot fill {} folds", cfg.folds)));
    }
    if y.len() != n {
        return Err(Error::Dimension(format!("response has length {}, design has {n} rows", y.len())));
    }
    let std = cfg.standardise.then(|| standardise(x, y));
    let (xw, yw) = match &std {
        Some(s) => (&s.x, &s.y),
        None => (x, y),
    };
    let grid = cfg.grid(lambda_max(xw, yw));
    let labels = fold_assignment(n, cfg.folds, seed);
    let mut mse = vec![vec![0.0; cfg.folds]; grid.len()];
    for k in 0..cfg.folds {
        let train: Vec<usize> = (0..n).filter(|&i| labels[i] != k).collect();
        let test: Vec<usize> = (0..n).filter(|&i| labels[i] == k).collect();
        let (xt, xv) = (rows(xw, &train), rows(xw, &test));
        let yt = DVector::from_fn(train.len(), |i, _| yw[train[i]]);
        let yv = DVector::from_fn(test.len(), |i, _| yw[test[i]]);
        for (g, beta) in path(&xt, &yt, &grid, cfg)?.iter().enumerate() {
            mse[g][k] = (&yv - &xv * beta).norm_squared() / test.len() as f64;
        }
    }
    let kf = cfg.folds as f64;
    let cv_curve: Vec<CvPoint> = grid
        .iter()
        .zip(&mse)
        .map(|(&lambda, m)| {
            let mean = m.iter().sum::<f64>() / kf;
            let var = m.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (kf - 1.0);
            CvPoint { lambda, mean_mse: mean, se_mse: (var / kf).sqrt() }
        })
        .collect();
    // first minimum, so ties go to the larger penalty
    let best = (0..cv_curve.len()).fold(0, |b, g| if cv_curve[g].mean_mse < cv_curve[b].mean_mse { g } else { b });
    let full = path(xw, yw, &grid[..=best], cfg)?;
    let mut beta = full.into_iter().last().unwrap_or_else(|| DVector::zeros(x.ncols()));
    let mut intercept = 0.0;
    if let Some(s) = &std {
        beta.component_div_assign(&s.x_scale);
        intercept = s.y_mean - s.x_mean.dot(&beta);
    }
    Ok(LassoCvFit { beta, intercept, lambda: grid[best], cv_curve, folds: cfg.folds })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_endpoints() {
        let g = log_grid(2.0, 1e-4, 100);
        assert_eq!(g.len(), 100);
        assert_eq!(g[0], 2.0);
        assert!((g[99] - 2e-4).abs() < 1e-15);
        assert!(g.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn soft_threshold_cases() {
        assert_eq!(soft_threshold(3.0, 1.0), 2.0);
        assert_eq!(soft_threshold(-3.0, 1.0), -2.0);
        assert_eq!(soft_threshold(0.5, 1.0), 0.0);
    }

    #[test]
    fn folds_are_balanced_and_seeded() {
        let a = fold_assignment(23, 5, 7);
        assert_eq!(a, fold_assignment(23, 5, 7));
        for k in 0..5 {
            let c = a.iter().filter(|&&l| l == k).count();
            assert!(c == 4 || c == 5);
        }
    }

    #[test]
    fn config_validation() {
        assert!(LassoConfig { folds: 1, ..Default::default() }.validate().is_err());
        assert!(LassoConfig { lambda_grid: vec![1.0, 2.0], ..Default::default() }.validate().is_err());
        assert!(LassoConfig { lambda_grid: vec![2.0, 1.0], ..Default::default() }.validate().is_ok());
    }
}
