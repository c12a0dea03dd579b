//! Sparse global-local logistic regression with the Jaakkola–Jordan bound.
//!
//! y_i | α, β ~ Bernoulli(σ(α + X_iᵀβ)) with β_j | τ_j, ν ~ N(0, τ_j²ν²) and
//! the scale priors of the other models. Each log σ term is replaced by the
//! quadratic lower bound at ξ_i, which makes every block conjugate.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::global_local::{scale_rate, scale_shape};
use crate::linreg::{intercept_block, prior_blocks, LinRegHyper};
use crate::solver::{run_fixed_point, ConvergenceReport, Coordinate, CoordinateModel, SolverConfig};
use crate::spd::SpdFactor;
use crate::special::{jj_lambda_finite, log_sigmoid, sigmoid};

/// Lower clamp for ξ_i.
pub const XI_MIN: f64 = 1e-8;

/// Default Monte Carlo sample count for averaged predictions.
pub const MC_PREDICT_SAMPLES: usize = 10_000;

/// The logistic model reads the coefficient, scale and intercept fields of
/// the regression hyperparameters; the noise fields are unused.
pub type LogRegHyper = LinRegHyper;

#[derive(Clone, Debug, PartialEq)]
pub struct ClassificationData {
    x: DMatrix<f64>,
    y: DVector<f64>,
    intercept: bool,
    /// Xᵀ(y − ½).
    xt_centred: DVector<f64>,
}

impl ClassificationData {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>, intercept: bool) -> Result<Self> {
        let (n, p) = x.shape();
        if n == 0 || p == 0 {
            return Err(Error::Dimension(format!("design must be non-empty, got {n}×{p}")));
        }
        if y.len() != n {
            return Err(Error::Dimension(format!("labels have length {}, design has {n} rows", y.len())));
        }
        if let Some(bad) = y.iter().find(|v| **v != 0.0 && **v != 1.0) {
            return Err(Error::InvalidProblem(format!("labels must be 0 or 1, found {bad}")));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidProblem("design must be finite".into()));
        }
        let xt_centred = x.transpose() * y.add_scalar(-0.5);
        Ok(ClassificationData { x, y, intercept, xt_centred })
    }

    pub fn from_rows(rows: &[Vec<f64>], y: &[f64], intercept: bool) -> Result<Self> {
        let p = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != p) {
            return Err(Error::Dimension("design rows have different lengths".into()));
        }
        ClassificationData::new(
            DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j]),
            DVector::from_column_slice(y),
            intercept,
        )
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

    /// E[η_i] and E[η_i²] under q, where η_i = α + X_iᵀβ.
    pub fn linear_moments(&self, s: &LogRegVariationalState) -> (DVector<f64>, DVector<f64>) {
        let mut mean = &self.x * &s.m;
        mean.add_scalar_mut(s.m_alpha);
        let xs = &self.x * &s.s;
        let quad = xs.component_mul(&self.x).column_sum();
        let second = DVector::from_fn(self.n(), |i, _| mean[i] * mean[i] + s.s_alpha2 + quad[i]);
        (mean, second)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRegVariationalState {
    pub m: DVector<f64>,
    pub s: DMatrix<f64>,
    pub m_alpha: f64,
    pub s_alpha2: f64,
    pub a_tau: Vec<f64>,
    pub b_tau: Vec<f64>,
    pub a_nu: f64,
    pub b_nu: f64,
    pub xi: Vec<f64>,
}

impl LogRegVariationalState {
    /// m = 0, S = I, intercept N(0, 1) when enabled, shapes 2, rates 1 and
    /// ξ set from these moments.
    pub fn initial(data: &ClassificationData) -> Self {
        let p = data.p();
        let mut s = LogRegVariationalState {
            m: DVector::zeros(p),
            s: DMatrix::identity(p, p),
            m_alpha: 0.0,
            s_alpha2: if data.intercept { 1.0 } else { 0.0 },
            a_tau: vec![2.0; p],
            b_tau: vec![1.0; p],
            a_nu: 2.0,
            b_nu: 1.0,
            xi: vec![1.0; data.n()],
        };
        s.xi = xi_from_moments(data, &s);
        s
    }

    pub fn validate(&self, data: &ClassificationData) -> Result<()> {
        let (n, p) = (data.n(), data.p());
        if self.m.len() != p || self.s.shape() != (p, p) || self.a_tau.len() != p || self.b_tau.len() != p {
            return Err(Error::Dimension(format!("state does not match p = {p}")));
        }
        if self.xi.len() != n {
            return Err(Error::Dimension(format!("ξ has length {}, expected {n}", self.xi.len())));
        }
        if self.m.iter().chain(self.s.iter()).chain([&self.m_alpha]).any(|v| !v.is_finite()) {
            return Err(Error::domain("logreg_state", "means and covariance must be finite"));
        }
        if data.intercept && !(self.s_alpha2 > 0.0 && self.s_alpha2.is_finite()) {
            return Err(Error::domain("logreg_state", "intercept variance must be positive"));
        }
        if self.b_tau.iter().chain([&self.b_nu]).chain(&self.xi).any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::domain("logreg_state", "rates and ξ must be positive"));
        }
        if self.a_tau.iter().chain([&self.a_nu]).any(|a| !(a.is_finite() && *a > 1.0)) {
            return Err(Error::domain("logreg_state", "scale shapes must exceed 1"));
        }
        Ok(())
    }

    pub fn second_moment(&self, j: usize) -> f64 {
        self.s[(j, j)] + self.m[j] * self.m[j]
    }

    fn local_weight_sum(&self) -> f64 {
        (0..self.m.len()).map(|j| self.a_tau[j] / self.b_tau[j] * self.second_moment(j)).sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).unwrap_or_default()
    }
}

fn xi_from_moments(data: &ClassificationData, s: &LogRegVariationalState) -> Vec<f64> {
    let (_, second) = data.linear_moments(s);
    second.iter().map(|v| v.max(0.0).sqrt().max(XI_MIN)).collect()
}

/// ξ_i = √E[η_i²], the point where the bound touches.
pub fn update_xi(data: &ClassificationData, state: &LogRegVariationalState) -> Result<LogRegVariationalState> {
    state.validate(data)?;
    let mut next = state.clone();
    next.xi = xi_from_moments(data, state);
    Ok(next)
}

/// log σ(η) ≥ log σ(ξ) + (η − ξ)/2 − λ(ξ)(η² − ξ²), so
/// log p(y | η) ≥ (y − ½)η − λ(ξ)η² + λ(ξ)ξ² − ξ/2 + log σ(ξ).
pub fn jj_bound(y: f64, eta: f64, eta_sq: f64, xi: f64) -> f64 {
    let lam = jj_lambda_finite(xi);
    (y - 0.5) * eta - lam * eta_sq + lam * xi * xi - 0.5 * xi + log_sigmoid(xi)
}

pub fn logreg_objective(data: &ClassificationData, hyper: &LogRegHyper, state: &LogRegVariationalState) -> Result<f64> {
    state.validate(data)?;
    let s = state;
    let (mean, second) = data.linear_moments(s);
    let data_term: f64 = (0..data.n()).map(|i| jj_bound(data.y[i], mean[i], second[i], s.xi[i])).sum();
    let mut j = -data_term;
    j += intercept_block(data.intercept, hyper.gamma_alpha, hyper.sigma_alpha_sq, s.m_alpha, s.s_alpha2);
    j += prior_blocks(&hyper.base, &s.m, &s.s, (&s.a_tau, &s.b_tau, s.a_nu, s.b_nu), 1.0)?;
    Ok(j)
}

const LOGREG_COORDS: [Coordinate; 7] = [
    Coordinate::explicit("xi"),
    Coordinate::explicit("intercept"),
    Coordinate::explicit("m_S"),
    Coordinate::explicit("b_tau"),
    Coordinate::explicit("b_nu"),
    Coordinate::equation("a_tau"),
    Coordinate::equation("a_nu"),
];

pub struct LogRegModel<'a> {
    pub data: &'a ClassificationData,
    pub hyper: LogRegHyper,
}

impl LogRegModel<'_> {
    fn lambdas(s: &LogRegVariationalState) -> Vec<f64> {
        s.xi.iter().map(|&x| jj_lambda_finite(x)).collect()
    }

    /// 2XᵀΛX + γ_β D with D = diag((a_ν/b_ν)(a_τj/b_τj)).
    pub fn system_matrix(&self, s: &LogRegVariationalState) -> DMatrix<f64> {
        let lam = Self::lambdas(s);
        let x = &self.data.x;
        let weighted = DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| 2.0 * lam[i] * x[(i, j)]);
        let mut a = x.transpose() * weighted;
        let g = self.hyper.base.gamma_beta * s.a_nu / s.b_nu;
        for j in 0..self.data.p() {
            a[(j, j)] += g * s.a_tau[j] / s.b_tau[j];
        }
        a
    }
}

impl CoordinateModel for LogRegModel<'_> {
    type State = LogRegVariationalState;

    fn coordinates(&self) -> &[Coordinate] {
        &LOGREG_COORDS
    }

    fn initial_state(&self) -> Result<LogRegVariationalState> {
        Ok(LogRegVariationalState::initial(self.data))
    }

    fn update(&self, index: usize, s: &mut LogRegVariationalState, cfg: &SolverConfig) -> Result<f64> {
        let h = &self.hyper.base;
        let d = self.data;
        let p = d.p();
        let mut residual: f64 = 0.0;
        match index {
            0 => s.xi = xi_from_moments(d, s),
            1 => {
                if d.intercept {
                    let lam = Self::lambdas(s);
                    let xm = &d.x * &s.m;
                    let lam_sum: f64 = lam.iter().sum();
                    let num: f64 = (0..d.n()).map(|i| (d.y[i] - 0.5) - 2.0 * lam[i] * xm[i]).sum();
                    let denom = 2.0 * lam_sum + self.hyper.gamma_alpha / self.hyper.sigma_alpha_sq;
                    s.m_alpha = num / denom;
                    s.s_alpha2 = self.hyper.gamma_alpha / denom;
                }
            }
            2 => {
                let chol = SpdFactor::new(&self.system_matrix(s), "coefficient system")?;
                let lam = DVector::from_vec(Self::lambdas(s));
                let rhs = &d.xt_centred - d.x.transpose() * lam * (2.0 * s.m_alpha);
                s.m = chol.solve(&rhs);
                // ((2/γ_β)XᵀΛX + D)⁻¹ = γ_β (2XᵀΛX + γ_β D)⁻¹
                s.s = chol.inverse() * h.gamma_beta;
            }
            3 => {
                let c = h.gamma_tau - 0.5 * h.gamma_beta;
                for j in 0..p {
                    let w = h.gamma_beta * s.a_tau[j] * s.a_nu * s.second_moment(j) / s.b_nu;
                    s.b_tau[j] = scale_rate(s.a_tau[j], c, w, h.lambda_tau, h.gamma_tau);
                }
            }
            4 => {
                let c = h.gamma_nu - 0.5 * p as f64 * h.gamma_beta;
                let w = h.gamma_beta * s.a_nu * s.local_weight_sum();
                s.b_nu = scale_rate(s.a_nu, c, w, h.lambda_nu, h.gamma_nu);
            }
            5 => {
                for j in 0..p {
                    let k = s.a_nu * s.second_moment(j) / (s.b_nu * s.b_tau[j]);
                    let sol = scale_shape(k, 1.0, h.gamma_beta, h.gamma_tau, s.b_tau[j], h.lambda_tau, cfg)?;
                    s.a_tau[j] = sol.value;
                    residual = residual.max(sol.residual);
                }
            }
            6 => {
                let k = s.local_weight_sum() / s.b_nu;
                let sol = scale_shape(k, p as f64, h.gamma_beta, h.gamma_nu, s.b_nu, h.lambda_nu, cfg)?;
                s.a_nu = sol.value;
                residual = sol.residual;
            }
            _ => return Err(Error::InvalidProblem(format!("no coordinate {index}"))),
        }
        Ok(residual)
    }

    fn objective(&self, s: &LogRegVariationalState) -> Result<f64> {
        logreg_objective(self.data, &self.hyper, s)
    }

    fn parameters(&self, s: &LogRegVariationalState, out: &mut Vec<f64>) {
        out.extend(s.m.iter());
        out.extend(s.s.iter());
        out.extend([s.m_alpha, s.s_alpha2]);
        out.extend_from_slice(&s.a_tau);
        out.extend_from_slice(&s.b_tau);
        out.extend([s.a_nu, s.b_nu]);
        out.extend_from_slice(&s.xi);
    }
}

pub fn logreg_sweep(
    data: &ClassificationData,
    hyper: &LogRegHyper,
    state: &LogRegVariationalState,
    cfg: &SolverConfig,
) -> Result<LogRegVariationalState> {
    hyper.validate()?;
    state.validate(data)?;
    let mut next = state.clone();
    crate::solver::sweep(&LogRegModel { data, hyper: *hyper }, &mut next, cfg)?;
    Ok(next)
}

pub fn logreg_fit(
    data: &ClassificationData,
    hyper: &LogRegHyper,
    cfg: &SolverConfig,
) -> Result<(LogRegVariationalState, ConvergenceReport)> {
    hyper.validate()?;
    run_fixed_point(&LogRegModel { data, hyper: *hyper }, cfg)
}

fn check_columns(state: &LogRegVariationalState, x: &DMatrix<f64>) -> Result<()> {
    if x.ncols() != state.m.len() {
        return Err(Error::Dimension(format!("new design has {} columns, model has {}", x.ncols(), state.m.len())));
    }
    Ok(())
}

/// Plug-in probabilities σ(m_α + xᵀm).
pub fn predict_proba(state: &LogRegVariationalState, x_new: &DMatrix<f64>) -> Result<Vec<f64>> {
    check_columns(state, x_new)?;
    Ok((x_new * &state.m).iter().map(|e| sigmoid(e + state.m_alpha)).collect())
}

/// Probabilities averaged over `samples` draws of (α, β) from q.
pub fn predict_proba_mc(
    state: &LogRegVariationalState,
    x_new: &DMatrix<f64>,
    samples: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    check_columns(state, x_new)?;
    if samples == 0 {
        return Err(Error::domain("predict_proba_mc", "samples must be positive"));
    }
    let p = state.m.len();
    let chol = state
        .s
        .clone()
        .cholesky()
        .ok_or_else(|| Error::domain("predict_proba_mc", "covariance is not positive definite"))?;
    let l = chol.l();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut acc = vec![0.0; x_new.nrows()];
    for _ in 0..samples {
        let z = DVector::from_fn(p, |_, _| StandardNormal.sample(&mut rng));
        let beta = &state.m + &l * z;
        let za: f64 = StandardNormal.sample(&mut rng);
        let alpha = state.m_alpha + state.s_alpha2.sqrt() * za;
        for (a, e) in acc.iter_mut().zip((x_new * &beta).iter()) {
            *a += sigmoid(e + alpha);
        }
    }
    Ok(acc.into_iter().map(|a| a / samples as f64).collect())
}

/// One binary fit per class, each class against the rest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OneVsRest {
    pub classes: Vec<usize>,
    pub states: Vec<LogRegVariationalState>,
    pub reports: Vec<ConvergenceReport>,
}

impl OneVsRest {
    /// Class with the highest plug-in probability for each row.
    pub fn predict(&self, x_new: &DMatrix<f64>) -> Result<Vec<usize>> {
        let probs = self.states.iter().map(|s| predict_proba(s, x_new)).collect::<Result<Vec<_>>>()?;
        Ok((0..x_new.nrows())
            .map(|i| {
                let best = (0..probs.len()).max_by(|&a, &b| probs[a][i].total_cmp(&probs[b][i])).unwrap_or(0);
                self.classes[best]
            })
            .collect())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).unwrap_or_default()
    }
}

/// Fits one model per entry of `classes` on the relabelled data
/// 1{label = class}.
pub fn one_vs_rest_train(
    x: &DMatrix<f64>,
    labels: &[usize],
    classes: &[usize],
    hyper: &LogRegHyper,
    cfg: &SolverConfig,
    intercept: bool,
) -> Result<OneVsRest> {
    if labels.len() != x.nrows() {
        return Err(Error::Dimension(format!("{} labels for {} rows", labels.len(), x.nrows())));
    }
    let mut states = Vec::with_capacity(classes.len());
    let mut reports = Vec::with_capacity(classes.len());
    for &c in classes {
        let y = DVector::from_iterator(labels.len(), labels.iter().map(|&l| if l == c { 1.0 } else { 0.0 }));
        let data = ClassificationData::new(x.clone(), y, intercept)?;
        let (state, report) = logreg_fit(&data, hyper, cfg)?;
        states.push(state);
        reports.push(report);
    }
    Ok(OneVsRest { classes: classes.to_vec(), states, reports })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn xi_reduces_to_intercept_magnitude() {
        let d = ClassificationData::from_rows(&[vec![0.4], vec![-1.0]], &[1.0, 0.0], true).unwrap();
        let mut s = LogRegVariationalState::initial(&d);
        s.m[0] = 0.0;
        s.s[(0, 0)] = 0.0;
        s.s_alpha2 = 0.0;
        s.m_alpha = -3.0;
        let xi = xi_from_moments(&d, &s);
        assert_eq!(xi, vec![3.0, 3.0]);
        s.m_alpha = 0.0;
        assert_eq!(xi_from_moments(&d, &s), vec![XI_MIN, XI_MIN]);
    }

    #[test]
    fn bound_touches_at_xi() {
        for &(y, eta) in &[(1.0, 0.3), (0.0, -2.5), (1.0, 7.0), (0.0, 0.0)] {
            let exact = if y == 1.0 { log_sigmoid(eta) } else { log_sigmoid(-eta) };
            let b = jj_bound(y, eta, eta * eta, f64::max(eta.abs(), XI_MIN));
            assert!((b - exact).abs() < 1e-8, "{y} {eta}: {b} vs {exact}");
            assert!(jj_bound(y, eta, eta * eta, 1.3) <= exact + 1e-15);
        }
    }

    #[test]
    fn rejects_non_binary_labels() {
        assert!(ClassificationData::from_rows(&[vec![1.0]], &[2.0], false).is_err());
    }

    #[test]
    fn prediction_limits() {
        let d = ClassificationData::from_rows(&[vec![1.0]], &[1.0], true).unwrap();
        let mut s = LogRegVariationalState::initial(&d);
        assert_eq!(predict_proba(&s, &DMatrix::zeros(1, 1)).unwrap(), vec![0.5]);
        s.m[0] = 1e3;
        assert!((predict_proba(&s, &DMatrix::from_element(1, 1, 1.0)).unwrap()[0] - 1.0).abs() < 1e-12);
        assert!(predict_proba(&s, &DMatrix::zeros(1, 2)).is_err());
    }
}
