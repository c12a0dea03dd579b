//! Sparse global-local linear regression.
//!
//! y | α, β, σ² ~ N(α1 + Xβ, σ²I), β_j | τ_j, ν, σ ~ N(0, τ_j²ν²σ²), with the
//! same Exponential and Inverse-Gamma priors on the variances as the
//! Normal-means model and α ~ N(0, σ_α²). The variational family is
//! q(β) = N(m, S), q(α) = N(m_α, s_α²) and Inverse-Gammas elsewhere.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::global_local::{expected_log, ig_exp_kl, ig_ig_kl, noise_shape, scale_rate, scale_shape};
use crate::normal_means::NMHyperParams;
use crate::solver::{run_fixed_point, ConvergenceReport, Coordinate, CoordinateModel, SolverConfig};
use crate::spd::{log_det_spd, SpdFactor};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Ridge used for the initial coefficient mean.
pub const INIT_RIDGE: f64 = 1e-2;

#[derive(Clone, Debug, PartialEq)]
pub struct RegressionData {
    x: DMatrix<f64>,
    y: DVector<f64>,
    intercept: bool,
    xtx: DMatrix<f64>,
    xty: DVector<f64>,
    /// Xᵀ1.
    col_sums: DVector<f64>,
}

impl RegressionData {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>, intercept: bool) -> Result<Self> {
        let (n, p) = x.shape();
        if n == 0 || p == 0 {
            return Err(Error::Dimension(format!("design must be non-empty, got {n}×{p}")));
        }
        if y.len() != n {
            return Err(Error::Dimension(format!("response has length {}, design has {n} rows", y.len())));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidProblem("design and response must be finite".into()));
        }
        let xt = x.transpose();
        let xtx = &xt * &x;
        let xty = &xt * &y;
        let col_sums = xt * DVector::from_element(n, 1.0);
        Ok(RegressionData { x, y, intercept, xtx, xty, col_sums })
    }

    pub fn from_rows(rows: &[Vec<f64>], y: &[f64], intercept: bool) -> Result<Self> {
        let p = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != p) {
            return Err(Error::Dimension("design rows have different lengths".into()));
        }
        let x = DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j]);
        RegressionData::new(x, DVector::from_column_slice(y), intercept)
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn intercept(&self) -> bool {
        self.intercept
    }

    pub fn xtx(&self) -> &DMatrix<f64> {
        &self.xtx
    }

    /// Expected residual sum of squares, SSR, under q.
    pub fn ssr(&self, s: &LinRegVariationalState) -> f64 {
        let n = self.n() as f64;
        let mut r = &self.y - &self.x * &s.m;
        r.add_scalar_mut(-s.m_alpha);
        r.norm_squared() + self.xtx.component_mul(&s.s).sum() + n * s.s_alpha2
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinRegHyper {
    #[serde(flatten)]
    pub base: NMHyperParams,
    pub sigma_alpha_sq: f64,
    pub gamma_alpha: f64,
}

impl Default for LinRegHyper {
    fn default() -> Self {
        LinRegHyper { base: NMHyperParams::default(), sigma_alpha_sq: 10.0, gamma_alpha: 1.0 }
    }
}

impl LinRegHyper {
    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        for (name, v) in [("sigma_alpha_sq", self.sigma_alpha_sq), ("gamma_alpha", self.gamma_alpha)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidProblem(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinRegVariationalState {
    pub m: DVector<f64>,
    pub s: DMatrix<f64>,
    pub m_alpha: f64,
    pub s_alpha2: f64,
    pub a_tau: Vec<f64>,
    pub b_tau: Vec<f64>,
    pub a_nu: f64,
    pub b_nu: f64,
    pub a_sigma: f64,
    pub b_sigma: f64,
}

impl LinRegVariationalState {
    pub fn initial(data: &RegressionData) -> Result<Self> {
        let (n, p) = (data.n(), data.p());
        let (m_alpha, s_alpha2) = if data.intercept { (data.y.sum() / n as f64, 1.0) } else { (0.0, 0.0) };
        let mut a = data.xtx.clone();
        for j in 0..p {
            a[(j, j)] += INIT_RIDGE;
        }
        let chol = SpdFactor::new(&a, "initial ridge system")?;
        let m = chol.solve(&(&data.xty - &data.col_sums * m_alpha));
        Ok(LinRegVariationalState {
            m,
            s: DMatrix::identity(p, p) * INIT_RIDGE,
            m_alpha,
            s_alpha2,
            a_tau: vec![2.0; p],
            b_tau: vec![1.0; p],
            a_nu: 2.0,
            b_nu: 1.0,
            a_sigma: 2.0,
            b_sigma: 1.0,
        })
    }

    pub fn validate(&self, data: &RegressionData) -> Result<()> {
        let p = data.p();
        if self.m.len() != p || self.s.shape() != (p, p) || self.a_tau.len() != p || self.b_tau.len() != p {
            return Err(Error::Dimension(format!("state does not match p = {p}")));
        }
        if self.m.iter().chain(self.s.iter()).chain([&self.m_alpha]).any(|v| !v.is_finite()) {
            return Err(Error::domain("linreg_state", "means and covariance must be finite"));
        }
        if data.intercept && !(self.s_alpha2 > 0.0 && self.s_alpha2.is_finite()) {
            return Err(Error::domain("linreg_state", "intercept variance must be positive"));
        }
        let positive = self.b_tau.iter().chain([&self.b_nu, &self.b_sigma, &self.a_sigma]);
        if positive.into_iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::domain("linreg_state", "rates must be positive"));
        }
        if self.a_tau.iter().chain([&self.a_nu]).any(|a| !(a.is_finite() && *a > 1.0)) {
            return Err(Error::domain("linreg_state", "scale shapes must exceed 1"));
        }
        Ok(())
    }

    pub fn beta_hat(&self) -> &DVector<f64> {
        &self.m
    }

    /// S_jj + m_j².
    pub fn second_moment(&self, j: usize) -> f64 {
        self.s[(j, j)] + self.m[j] * self.m[j]
    }

    /// Σ_j (a_τj/b_τj)(S_jj + m_j²).
    fn local_weight_sum(&self) -> f64 {
        (0..self.m.len()).map(|j| self.a_tau[j] / self.b_tau[j] * self.second_moment(j)).sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).unwrap_or_default()
    }
}

/// Prior-block terms shared by the regression objectives:
/// γ_β/2 [Σ ρ (a_ν/b_ν)(a_τj/b_τj) M_j − log|S| + Σ E log τ_j² + p E log ν² − p]
/// plus the τ and ν KL blocks, where ρ is the coefficient precision scale.
pub(crate) fn prior_blocks(
    h: &NMHyperParams,
    m: &DVector<f64>,
    s: &DMatrix<f64>,
    scales: (&[f64], &[f64], f64, f64),
    rho: f64,
) -> Result<f64> {
    let (a_tau, b_tau, a_nu, b_nu) = scales;
    let p = m.len();
    let log_det = log_det_spd(s)?;
    let nu_ratio = a_nu / b_nu;
    let mut beta = -log_det + p as f64 * (expected_log(a_nu, b_nu) - 1.0);
    let mut tau = 0.0;
    for j in 0..p {
        let mj = s[(j, j)] + m[j] * m[j];
        beta += rho * nu_ratio * a_tau[j] / b_tau[j] * mj + expected_log(a_tau[j], b_tau[j]);
        tau += ig_exp_kl(a_tau[j], b_tau[j], h.lambda_tau);
    }
    Ok(0.5 * h.gamma_beta * beta + h.gamma_tau * tau + h.gamma_nu * ig_exp_kl(a_nu, b_nu, h.lambda_nu))
}

/// γ_α/2 [(m_α² + s_α²)/σ_α² − log(s_α²/σ_α²) − 1], zero without an intercept.
pub(crate) fn intercept_block(
    intercept: bool,
    gamma_alpha: f64,
    sigma_alpha_sq: f64,
    m_alpha: f64,
    s_alpha2: f64,
) -> f64 {
    if !intercept {
        return 0.0;
    }
    0.5 * gamma_alpha * ((m_alpha * m_alpha + s_alpha2) / sigma_alpha_sq - (s_alpha2 / sigma_alpha_sq).ln() - 1.0)
}

pub fn lr_objective(data: &RegressionData, hyper: &LinRegHyper, state: &LinRegVariationalState) -> Result<f64> {
    state.validate(data)?;
    let s = state;
    let h = &hyper.base;
    let n = data.n() as f64;
    let p = data.p() as f64;
    let rho = s.a_sigma / s.b_sigma;
    let e_log_sigma = expected_log(s.a_sigma, s.b_sigma);
    let mut j = 0.5 * n * (LN_2PI + e_log_sigma) + 0.5 * rho * data.ssr(s);
    j += intercept_block(data.intercept, hyper.gamma_alpha, hyper.sigma_alpha_sq, s.m_alpha, s.s_alpha2);
    j += prior_blocks(h, &s.m, &s.s, (&s.a_tau, &s.b_tau, s.a_nu, s.b_nu), rho)?;
    j += 0.5 * h.gamma_beta * p * e_log_sigma;
    j += h.gamma_sigma * ig_ig_kl(s.a_sigma, s.b_sigma, h.a_pi_sigma, h.b_pi_sigma);
    Ok(j)
}

const LR_COORDS: [Coordinate; 8] = [
    Coordinate::explicit("intercept"),
    // m and S share the factorisation of XᵀX + γ_β(a_ν/b_ν)D, and neither
    // reads the other, so one update sets both.
    Coordinate::explicit("m_S"),
    Coordinate::explicit("b_tau"),
    Coordinate::explicit("b_sigma"),
    Coordinate::explicit("b_nu"),
    Coordinate::equation("a_tau"),
    Coordinate::equation("a_sigma"),
    Coordinate::equation("a_nu"),
];

pub struct LinRegModel<'a> {
    pub data: &'a RegressionData,
    pub hyper: LinRegHyper,
}

impl LinRegModel<'_> {
    /// XᵀX + γ_β(a_ν/b_ν)D.
    pub fn system_matrix(&self, s: &LinRegVariationalState) -> DMatrix<f64> {
        let mut a = self.data.xtx.clone();
        let g = self.hyper.base.gamma_beta * s.a_nu / s.b_nu;
        for j in 0..self.data.p() {
            a[(j, j)] += g * s.a_tau[j] / s.b_tau[j];
        }
        a
    }

    /// (a_ν/b_ν) Σ_j (a_τj/b_τj) M_j, the prior part of the noise update.
    fn prior_quadratic(s: &LinRegVariationalState) -> f64 {
        s.a_nu / s.b_nu * s.local_weight_sum()
    }
}

impl CoordinateModel for LinRegModel<'_> {
    type State = LinRegVariationalState;

    fn coordinates(&self) -> &[Coordinate] {
        &LR_COORDS
    }

    fn initial_state(&self) -> Result<LinRegVariationalState> {
        LinRegVariationalState::initial(self.data)
    }

    fn update(&self, index: usize, s: &mut LinRegVariationalState, cfg: &SolverConfig) -> Result<f64> {
        let h = &self.hyper.base;
        let d = self.data;
        let (n, p) = (d.n() as f64, d.p());
        let mut residual: f64 = 0.0;
        match index {
            0 => {
                if d.intercept {
                    let rho = s.a_sigma / s.b_sigma;
                    let prior = self.hyper.gamma_alpha / self.hyper.sigma_alpha_sq;
                    let resid_sum = d.y.sum() - d.col_sums.dot(&s.m);
                    s.m_alpha = rho * resid_sum / (n * rho + prior);
                    s.s_alpha2 = 1.0 / (n * rho / self.hyper.gamma_alpha + 1.0 / self.hyper.sigma_alpha_sq);
                }
            }
            1 => {
                let chol = SpdFactor::new(&self.system_matrix(s), "coefficient system")?;
                s.m = chol.solve(&(&d.xty - &d.col_sums * s.m_alpha));
                s.s = chol.inverse() * (h.gamma_beta * s.b_sigma / s.a_sigma);
            }
            2 => {
                let c = h.gamma_tau - 0.5 * h.gamma_beta;
                let rho = s.a_sigma / s.b_sigma;
                for j in 0..p {
                    let w = h.gamma_beta * rho * s.a_tau[j] * s.a_nu * s.second_moment(j) / s.b_nu;
                    s.b_tau[j] = scale_rate(s.a_tau[j], c, w, h.lambda_tau, h.gamma_tau);
                }
            }
            3 => {
                let r = d.ssr(s) + h.gamma_beta * Self::prior_quadratic(s);
                s.b_sigma = s.a_sigma * (r + 2.0 * h.gamma_sigma * h.b_pi_sigma)
                    / (n + h.gamma_beta * p as f64 + 2.0 * h.gamma_sigma * h.a_pi_sigma);
            }
            4 => {
                let c = h.gamma_nu - 0.5 * p as f64 * h.gamma_beta;
                let w = h.gamma_beta * s.a_sigma / s.b_sigma * s.a_nu * s.local_weight_sum();
                s.b_nu = scale_rate(s.a_nu, c, w, h.lambda_nu, h.gamma_nu);
            }
            5 => {
                let rho = s.a_sigma / s.b_sigma;
                for j in 0..p {
                    let k = rho * s.a_nu * s.second_moment(j) / (s.b_nu * s.b_tau[j]);
                    let sol = scale_shape(k, 1.0, h.gamma_beta, h.gamma_tau, s.b_tau[j], h.lambda_tau, cfg)?;
                    s.a_tau[j] = sol.value;
                    residual = residual.max(sol.residual);
                }
            }
            6 => {
                let r = d.ssr(s) + h.gamma_beta * Self::prior_quadratic(s);
                let count = n + h.gamma_beta * p as f64;
                let sol = noise_shape(count, r, s.b_sigma, h.gamma_sigma, h.a_pi_sigma, h.b_pi_sigma, cfg)?;
                s.a_sigma = sol.value;
                residual = sol.residual;
            }
            7 => {
                let k = s.a_sigma / s.b_sigma * s.local_weight_sum() / s.b_nu;
                let sol = scale_shape(k, p as f64, h.gamma_beta, h.gamma_nu, s.b_nu, h.lambda_nu, cfg)?;
                s.a_nu = sol.value;
                residual = sol.residual;
            }
            _ => return Err(Error::InvalidProblem(format!("no coordinate {index}"))),
        }
        Ok(residual)
    }

    fn objective(&self, s: &LinRegVariationalState) -> Result<f64> {
        lr_objective(self.data, &self.hyper, s)
    }

    fn parameters(&self, s: &LinRegVariationalState, out: &mut Vec<f64>) {
        out.extend(s.m.iter());
        out.extend(s.s.iter());
        out.extend([s.m_alpha, s.s_alpha2]);
        out.extend_from_slice(&s.a_tau);
        out.extend_from_slice(&s.b_tau);
        out.extend([s.a_nu, s.b_nu, s.a_sigma, s.b_sigma]);
    }
}

pub fn lr_sweep(
    data: &RegressionData,
    hyper: &LinRegHyper,
    state: &LinRegVariationalState,
    cfg: &SolverConfig,
) -> Result<LinRegVariationalState> {
    hyper.validate()?;
    state.validate(data)?;
    let mut next = state.clone();
    crate::solver::sweep(&LinRegModel { data, hyper: *hyper }, &mut next, cfg)?;
    Ok(next)
}

pub fn lr_fit(
    data: &RegressionData,
    hyper: &LinRegHyper,
    cfg: &SolverConfig,
) -> Result<(LinRegVariationalState, ConvergenceReport)> {
    hyper.validate()?;
    run_fixed_point(&LinRegModel { data, hyper: *hyper }, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> RegressionData {
        let rows = vec![vec![1.0, 0.5], vec![-0.3, 2.0], vec![0.7, -1.1], vec![1.5, 0.2]];
        RegressionData::from_rows(&rows, &[1.0, -0.5, 2.0, 0.3], false).unwrap()
    }

    #[test]
    fn initial_mean_is_ridge_solution() {
        let d = toy();
        let s = LinRegVariationalState::initial(&d).unwrap();
        let a = d.xtx() + DMatrix::identity(2, 2) * INIT_RIDGE;
        let r = a * &s.m - d.x().transpose() * d.y();
        assert!(r.amax() < 1e-12);
        assert_eq!(s.m_alpha, 0.0);
    }

    #[test]
    fn covariance_is_scaled_inverse() {
        let d = toy();
        let model = LinRegModel { data: &d, hyper: LinRegHyper::default() };
        let mut s = LinRegVariationalState::initial(&d).unwrap();
        s.a_sigma = 3.0;
        s.b_sigma = 1.5;
        s.a_tau = vec![2.0, 5.0];
        model.update(1, &mut s, &SolverConfig::default()).unwrap();
        let prod = model.system_matrix(&s) * &s.s * (s.a_sigma / (model.hyper.base.gamma_beta * s.b_sigma));
        assert!((prod - DMatrix::identity(2, 2)).amax() < 1e-12);
    }

    #[test]
    fn ssr_matches_expanded_form() {
        let d = toy().clone();
        let d = RegressionData::new(d.x().clone(), d.y().clone(), true).unwrap();
        let mut s = LinRegVariationalState::initial(&d).unwrap();
        s.m_alpha = 0.4;
        s.s_alpha2 = 0.2;
        s.s = DMatrix::from_row_slice(2, 2, &[0.3, 0.1, 0.1, 0.5]);
        let (y, x, m) = (d.y(), d.x(), &s.m);
        let n = 4.0;
        let xm = x * m;
        let expanded = y.norm_squared() - 2.0 * s.m_alpha * y.sum() - 2.0 * y.dot(&xm)
            + n * s.m_alpha.powi(2)
            + 2.0 * s.m_alpha * xm.sum()
            + xm.norm_squared()
            + (x.transpose() * x * &s.s).trace()
            + n * s.s_alpha2;
        assert!((d.ssr(&s) - expanded).abs() < 1e-12);
    }

    #[test]
    fn non_spd_covariance_is_rejected() {
        let d = toy();
        let mut s = LinRegVariationalState::initial(&d).unwrap();
        s.s = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(lr_objective(&d, &LinRegHyper::default(), &s).is_err());
    }

    #[test]
    fn dimension_errors() {
        assert!(RegressionData::from_rows(&[vec![1.0], vec![1.0, 2.0]], &[0.0, 1.0], false).is_err());
        assert!(RegressionData::new(DMatrix::zeros(3, 2), DVector::zeros(2), false).is_err());
    }
}
