//! Sparse global-local Normal-means model.
//!
//! y_ij | β_i ~ N(β_i, σ²), β_i | τ_i, ν ~ N(0, τ_i²ν²), τ_i² ~ Exp(λ_τ),
//! ν² ~ Exp(λ_ν), σ² ~ Inv-Gamma(a_π, b_π), fitted with a mean-field family
//! of Gaussians for β and Inverse-Gammas for every variance.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::global_local::{expected_log, ig_exp_kl, ig_ig_kl, noise_shape, scale_rate, scale_shape};
use crate::solver::{run_fixed_point, ConvergenceReport, Coordinate, CoordinateModel, SolverConfig};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// I rows of n observations each.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalMeansData {
    rows: usize,
    n: usize,
    means: Vec<f64>,
    /// Σ_j (y_ij − ȳ_i)² per row.
    within_ss: Vec<f64>,
}

impl NormalMeansData {
    pub fn new(y: &[Vec<f64>]) -> Result<Self> {
        let rows = y.len();
        if rows == 0 {
            return Err(Error::InvalidProblem("at least one coordinate is required".into()));
        }
        let n = y[0].len();
        if n == 0 || y.iter().any(|r| r.len() != n) {
            return Err(Error::Dimension("every coordinate needs the same positive number of observations".into()));
        }
        if y.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidProblem("observations must be finite".into()));
        }
        let means: Vec<f64> = y.iter().map(|r| r.iter().sum::<f64>() / n as f64).collect();
        let within_ss = y.iter().zip(&means).map(|(r, m)| r.iter().map(|v| (v - m).powi(2)).sum()).collect();
        Ok(NormalMeansData { rows, n, means, within_ss })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    /// Σ_i Σ_j [(y_ij − m_i)² + s_i²].
    fn expected_rss(&self, m: &[f64], s2: &[f64]) -> f64 {
        let n = self.n as f64;
        (0..self.rows).map(|i| self.within_ss[i] + n * ((self.means[i] - m[i]).powi(2) + s2[i])).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NMHyperParams {
    pub lambda_tau: f64,
    pub lambda_nu: f64,
    pub a_pi_sigma: f64,
    pub b_pi_sigma: f64,
    pub gamma_beta: f64,
    pub gamma_tau: f64,
    pub gamma_nu: f64,
    pub gamma_sigma: f64,
}

impl Default for NMHyperParams {
    fn default() -> Self {
        NMHyperParams {
            lambda_tau: 10.0,
            lambda_nu: 10.0,
            a_pi_sigma: 3.0,
            b_pi_sigma: 2.0,
            gamma_beta: 1.0,
            gamma_tau: 1e-9,
            gamma_nu: 1.0,
            gamma_sigma: 1.0,
        }
    }
}

impl NMHyperParams {
    pub fn validate(&self) -> Result<()> {
        let all = [
            ("lambda_tau", self.lambda_tau),
            ("lambda_nu", self.lambda_nu),
            ("a_pi_sigma", self.a_pi_sigma),
            ("b_pi_sigma", self.b_pi_sigma),
            ("gamma_beta", self.gamma_beta),
            ("gamma_tau", self.gamma_tau),
            ("gamma_nu", self.gamma_nu),
            ("gamma_sigma", self.gamma_sigma),
        ];
        for (name, v) in all {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidProblem(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NMVariationalState {
    pub m: Vec<f64>,
    pub s2: Vec<f64>,
    pub a_tau: Vec<f64>,
    pub b_tau: Vec<f64>,
    pub a_nu: f64,
    pub b_nu: f64,
    pub a_sigma: f64,
    pub b_sigma: f64,
}

impl NMVariationalState {
    /// m = ȳ, s² = 1, shapes 2, rates 1.
    pub fn initial(data: &NormalMeansData) -> Self {
        let i = data.rows;
        NMVariationalState {
            m: data.means.clone(),
            s2: vec![1.0; i],
            a_tau: vec![2.0; i],
            b_tau: vec![1.0; i],
            a_nu: 2.0,
            b_nu: 1.0,
            a_sigma: 2.0,
            b_sigma: 1.0,
        }
    }

    pub fn validate(&self, data: &NormalMeansData) -> Result<()> {
        let i = data.rows;
        if [self.m.len(), self.s2.len(), self.a_tau.len(), self.b_tau.len()].iter().any(|&l| l != i) {
            return Err(Error::Dimension(format!("state vectors must have length {i}")));
        }
        if self.m.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("nm_state", "means must be finite"));
        }
        let positive = self.s2.iter().chain(&self.b_tau).chain([&self.b_nu, &self.b_sigma, &self.a_sigma]);
        if positive.into_iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::domain("nm_state", "variances and rates must be positive"));
        }
        if self.a_tau.iter().chain([&self.a_nu]).any(|a| !(a.is_finite() && *a > 1.0)) {
            return Err(Error::domain("nm_state", "scale shapes must exceed 1"));
        }
        Ok(())
    }

    /// E[τ_i⁻²ν⁻²] (m_i² + s_i²) summed over coordinates, without the ν factor.
    fn local_weights(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.m.len()).map(|i| self.a_tau[i] / self.b_tau[i] * (self.m[i] * self.m[i] + self.s2[i]))
    }
}

/// The displayed objective, term by term.
pub fn nm_objective(data: &NormalMeansData, hyper: &NMHyperParams, state: &NMVariationalState) -> Result<f64> {
    state.validate(data)?;
    let h = hyper;
    let s = state;
    let i_n = (data.rows * data.n) as f64;
    let rss = data.expected_rss(&s.m, &s.s2);
    let mut j = 0.5 * i_n * (LN_2PI + expected_log(s.a_sigma, s.b_sigma)) + s.a_sigma / (2.0 * s.b_sigma) * rss;
    let e_log_nu = expected_log(s.a_nu, s.b_nu);
    let nu_ratio = s.a_nu / s.b_nu;
    let mut beta = 0.0;
    let mut tau = 0.0;
    for i in 0..data.rows {
        let m2 = s.m[i] * s.m[i] + s.s2[i];
        beta +=
            nu_ratio * s.a_tau[i] / s.b_tau[i] * m2 - s.s2[i].ln() + e_log_nu + expected_log(s.a_tau[i], s.b_tau[i])
                - 1.0;
        tau += ig_exp_kl(s.a_tau[i], s.b_tau[i], h.lambda_tau);
    }
    j += 0.5 * h.gamma_beta * beta + h.gamma_tau * tau;
    j += h.gamma_nu * ig_exp_kl(s.a_nu, s.b_nu, h.lambda_nu);
    j += h.gamma_sigma * ig_ig_kl(s.a_sigma, s.b_sigma, h.a_pi_sigma, h.b_pi_sigma);
    Ok(j)
}

const NM_COORDS: [Coordinate; 8] = [
    Coordinate::explicit("m"),
    Coordinate::explicit("s2"),
    Coordinate::explicit("b_tau"),
    Coordinate::explicit("b_sigma"),
    Coordinate::explicit("b_nu"),
    Coordinate::equation("a_tau"),
    Coordinate::equation("a_sigma"),
    Coordinate::equation("a_nu"),
];

pub struct NormalMeansModel<'a> {
    pub data: &'a NormalMeansData,
    pub hyper: NMHyperParams,
}

impl NormalMeansModel<'_> {
    fn data_precision(&self, s: &NMVariationalState) -> f64 {
        s.a_sigma * self.data.n as f64 / (s.b_sigma * self.hyper.gamma_beta)
    }

    fn prior_precision(&self, s: &NMVariationalState, i: usize) -> f64 {
        s.a_nu * s.a_tau[i] / (s.b_nu * s.b_tau[i])
    }
}

impl CoordinateModel for NormalMeansModel<'_> {
    type State = NMVariationalState;

    fn coordinates(&self) -> &[Coordinate] {
        &NM_COORDS
    }

    fn initial_state(&self) -> Result<NMVariationalState> {
        Ok(NMVariationalState::initial(self.data))
    }

    fn update(&self, index: usize, s: &mut NMVariationalState, cfg: &SolverConfig) -> Result<f64> {
        let h = &self.hyper;
        let rows = self.data.rows;
        let mut residual: f64 = 0.0;
        match index {
            0 => {
                let a = self.data_precision(s);
                for i in 0..rows {
                    s.m[i] = a / (a + self.prior_precision(s, i)) * self.data.means[i];
                }
            }
            1 => {
                let a = self.data_precision(s);
                for i in 0..rows {
                    s.s2[i] = 1.0 / (a + self.prior_precision(s, i));
                }
            }
            2 => {
                let c = h.gamma_tau - 0.5 * h.gamma_beta;
                for i in 0..rows {
                    let m2 = s.m[i] * s.m[i] + s.s2[i];
                    let w = h.gamma_beta * s.a_tau[i] * s.a_nu * m2 / s.b_nu;
                    s.b_tau[i] = scale_rate(s.a_tau[i], c, w, h.lambda_tau, h.gamma_tau);
                }
            }
            3 => {
                let rss = self.data.expected_rss(&s.m, &s.s2);
                let i_n = (rows * self.data.n) as f64;
                s.b_sigma =
                    s.a_sigma * (rss + 2.0 * h.gamma_sigma * h.b_pi_sigma) / (i_n + 2.0 * h.gamma_sigma * h.a_pi_sigma);
            }
            4 => {
                let c = h.gamma_nu - 0.5 * rows as f64 * h.gamma_beta;
                let w = h.gamma_beta * s.a_nu * s.local_weights().sum::<f64>();
                s.b_nu = scale_rate(s.a_nu, c, w, h.lambda_nu, h.gamma_nu);
            }
            5 => {
                for i in 0..rows {
                    let m2 = s.m[i] * s.m[i] + s.s2[i];
                    let k = s.a_nu * m2 / (s.b_nu * s.b_tau[i]);
                    let sol = scale_shape(k, 1.0, h.gamma_beta, h.gamma_tau, s.b_tau[i], h.lambda_tau, cfg)?;
                    s.a_tau[i] = sol.value;
                    residual = residual.max(sol.residual);
                }
            }
            6 => {
                let rss = self.data.expected_rss(&s.m, &s.s2);
                let i_n = (rows * self.data.n) as f64;
                let sol = noise_shape(i_n, rss, s.b_sigma, h.gamma_sigma, h.a_pi_sigma, h.b_pi_sigma, cfg)?;
                s.a_sigma = sol.value;
                residual = sol.residual;
            }
            7 => {
                let k = s.local_weights().sum::<f64>() / s.b_nu;
                let sol = scale_shape(k, rows as f64, h.gamma_beta, h.gamma_nu, s.b_nu, h.lambda_nu, cfg)?;
                s.a_nu = sol.value;
                residual = sol.residual;
            }
            _ => return Err(Error::InvalidProblem(format!("no coordinate {index}"))),
        }
        Ok(residual)
    }

    fn objective(&self, s: &NMVariationalState) -> Result<f64> {
        nm_objective(self.data, &self.hyper, s)
    }

    fn parameters(&self, s: &NMVariationalState, out: &mut Vec<f64>) {
        out.extend_from_slice(&s.m);
        out.extend_from_slice(&s.s2);
        out.extend_from_slice(&s.a_tau);
        out.extend_from_slice(&s.b_tau);
        out.extend([s.a_nu, s.b_nu, s.a_sigma, s.b_sigma]);
    }
}

/// One full sweep of the coordinate updates.
pub fn nm_sweep(
    data: &NormalMeansData,
    hyper: &NMHyperParams,
    state: &NMVariationalState,
    cfg: &SolverConfig,
) -> Result<NMVariationalState> {
    hyper.validate()?;
    let model = NormalMeansModel { data, hyper: *hyper };
    let mut next = state.clone();
    crate::solver::sweep(&model, &mut next, cfg)?;
    Ok(next)
}

pub fn nm_fit(
    data: &NormalMeansData,
    hyper: &NMHyperParams,
    cfg: &SolverConfig,
) -> Result<(NMVariationalState, ConvergenceReport)> {
    hyper.validate()?;
    run_fixed_point(&NormalMeansModel { data, hyper: *hyper }, cfg)
}

/// κ = 1 / (1 + n τ²ν²/σ²).
pub fn kappa(n: usize, tau2: f64, nu2: f64, sigma2: f64) -> f64 {
    let r = n as f64 * tau2 * nu2 / sigma2;
    if r.is_nan() {
        // ∞/∞ from forced extreme draws
        return 0.0;
    }
    1.0 / (1.0 + r)
}

fn inv_gamma(a: f64, b: f64) -> Result<Gamma<f64>> {
    Gamma::new(a, 1.0 / b).map_err(|e| Error::domain("kappa_posterior", format!("Inv-Gamma({a}, {b}): {e}")))
}

/// Draws independent (τ_i², ν², σ²) from the fitted factors and maps each
/// triple to κ_i. Returns one sample vector per coordinate.
pub fn kappa_posterior(state: &NMVariationalState, n: usize, mc_samples: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if mc_samples == 0 {
        return Err(Error::domain("kappa_posterior", "mc_samples must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Inv-Gamma(a, b) is the reciprocal of Gamma(a, rate b).
    let nu = inv_gamma(state.a_nu, state.b_nu)?;
    let sigma = inv_gamma(state.a_sigma, state.b_sigma)?;
    let mut out = Vec::with_capacity(state.m.len());
    for i in 0..state.m.len() {
        let tau = inv_gamma(state.a_tau[i], state.b_tau[i])?;
        let samples = (0..mc_samples)
            .map(|_| {
                let t = 1.0 / tau.sample(&mut rng);
                let v = 1.0 / nu.sample(&mut rng);
                let s = 1.0 / sigma.sample(&mut rng);
                kappa(n, t, v, s)
            })
            .collect();
        out.push(samples);
    }
    Ok(out)
}

/// Rows `coordinate,is_signal,sample_index,kappa`.
pub fn kappa_csv(samples: &[Vec<f64>], is_signal: &[bool]) -> String {
    let mut out = String::from("coordinate,is_signal,sample_index,kappa\n");
    for (i, set) in samples.iter().enumerate() {
        let sig = is_signal.get(i).copied().unwrap_or(false);
        for (k, v) in set.iter().enumerate() {
            out.push_str(&format!("{i},{},{k},{v}\n", sig as u8));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_state() -> NMVariationalState {
        NMVariationalState {
            m: vec![0.0],
            s2: vec![1.0],
            a_tau: vec![2.0],
            b_tau: vec![1.0],
            a_nu: 2.0,
            b_nu: 1.0,
            a_sigma: 2.0,
            b_sigma: 1.0,
        }
    }

    #[test]
    fn mean_and_variance_updates() {
        // a_σ/b_σ = 1, n = 5, prior precision 1, ȳ = 2
        let data = NormalMeansData::new(&[vec![2.0; 5]]).unwrap();
        let hyper = NMHyperParams { gamma_tau: 1.0, ..Default::default() };
        let model = NormalMeansModel { data: &data, hyper };
        let mut s =
            NMVariationalState { a_sigma: 2.0, b_sigma: 2.0, a_tau: vec![2.0], b_tau: vec![2.0], ..unit_state() };
        s.a_nu = 3.0;
        s.b_nu = 3.0;
        let cfg = SolverConfig::default();
        model.update(0, &mut s, &cfg).unwrap();
        model.update(1, &mut s, &cfg).unwrap();
        assert!((s.m[0] - 5.0 / 3.0).abs() < 1e-15);
        assert!((s.s2[0] - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn balanced_rate_update_reduces_to_square_root() {
        let data = NormalMeansData::new(&[vec![0.7, -0.2]]).unwrap();
        let hyper = NMHyperParams { gamma_tau: 0.5, gamma_beta: 1.0, ..Default::default() };
        let model = NormalMeansModel { data: &data, hyper };
        let mut s = NMVariationalState { m: vec![0.4], s2: vec![0.3], a_tau: vec![3.0], ..unit_state() };
        model.update(2, &mut s, &SolverConfig::default()).unwrap();
        let e: f64 = 2.0 * 10.0 * 0.5 * 1.0 * 3.0 * 2.0 * (0.16 + 0.3) / (2.0 * 1.0);
        let expect = 2.0 * e.sqrt() / (2.0 * 10.0 * 0.5);
        assert!((s.b_tau[0] - expect).abs() < 1e-14);
    }

    #[test]
    fn kappa_limits() {
        assert_eq!(kappa(5, 0.0, 1.0, 1.0), 1.0);
        assert!(kappa(5, 1e200, 1e200, 1.0) < 1e-300);
        assert_eq!(kappa(5, f64::INFINITY, 1.0, f64::INFINITY), 0.0);
    }

    #[test]
    fn kappa_needs_samples() {
        let data = NormalMeansData::new(&[vec![0.0]]).unwrap();
        assert!(kappa_posterior(&NMVariationalState::initial(&data), 1, 0, 1).is_err());
    }

    #[test]
    fn rejects_ragged_data() {
        assert!(NormalMeansData::new(&[vec![1.0, 2.0], vec![1.0]]).is_err());
        assert!(NormalMeansData::new(&[]).is_err());
    }
}
