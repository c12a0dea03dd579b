//! Closed-form tempered updates for conjugate exponential families and the
//! known-variance normal-normal model.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid_oracle::FiniteBlockProblem;
use crate::solver::{safeguarded_root, Coordinate, CoordinateModel, SolverConfig};

/// Conjugate prior in (pseudo-count, sufficient-statistic guess) form,
/// tempered by a confidence γ.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemperedConjugateUpdate {
    pub n0: f64,
    pub t0: Vec<f64>,
    pub n: usize,
    pub sum_t: Vec<f64>,
    pub gamma: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConjugatePosterior {
    pub n_n: f64,
    pub t_n: Vec<f64>,
    pub alpha: f64,
}

/// N_n = N0 + n/γ and T_n = α T0 + (1 − α) T̄ with α = γN0 / (γN0 + n).
/// With no data the prior is returned and α = 1.
pub fn tempered_conjugate_update(u: &TemperedConjugateUpdate) -> Result<ConjugatePosterior> {
    if !(u.n0.is_finite() && u.n0 > 0.0) {
        return Err(Error::domain("tempered_conjugate_update", format!("N0 must be positive, got {}", u.n0)));
    }
    if !(u.gamma.is_finite() && u.gamma > 0.0) {
        return Err(Error::domain("tempered_conjugate_update", format!("gamma must be positive, got {}", u.gamma)));
    }
    if u.t0.len() != u.sum_t.len() {
        return Err(Error::Dimension(format!("T0 has {} entries, sum_T has {}", u.t0.len(), u.sum_t.len())));
    }
    if u.t0.iter().chain(&u.sum_t).any(|v| !v.is_finite()) {
        return Err(Error::domain("tempered_conjugate_update", "statistics must be finite"));
    }
    let n = u.n as f64;
    let n_n = u.n0 + n / u.gamma;
    if u.n == 0 {
        return Ok(ConjugatePosterior { n_n, t_n: u.t0.clone(), alpha: 1.0 });
    }
    let g_n0 = u.gamma * u.n0;
    let alpha = g_n0 / (g_n0 + n);
    let t_n = u.t0.iter().zip(&u.sum_t).map(|(t0, s)| alpha * t0 + (1.0 - alpha) * (s / n)).collect();
    Ok(ConjugatePosterior { n_n, t_n, alpha })
}

/// Normal likelihood with known variance, normal prior on the mean.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalNormalProblem {
    pub mu0: f64,
    pub sigma0_sq: f64,
    pub sigma_sq: f64,
    pub ybar: f64,
    pub n: usize,
    pub gamma_mu: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalNormalPosterior {
    pub mu_q: f64,
    pub sigma_q_sq: f64,
    /// Weight on the prior mean.
    pub alpha: f64,
}

impl NormalNormalProblem {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("sigma0_sq", self.sigma0_sq), ("sigma_sq", self.sigma_sq), ("gamma_mu", self.gamma_mu)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::domain("normal_normal", format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.mu0.is_finite() && self.ybar.is_finite()) {
            return Err(Error::domain("normal_normal", "means must be finite"));
        }
        if self.n == 0 {
            return Err(Error::domain("normal_normal", "at least one observation is required"));
        }
        Ok(())
    }

    /// Data precision after tempering, n / (γσ²).
    pub fn data_precision(&self) -> f64 {
        self.n as f64 / (self.gamma_mu * self.sigma_sq)
    }

    /// Grid discretisation of the same problem: `atoms` equally spaced means
    /// over μ0 ± `half_width`·σ0, prior weights ∝ the normal density, and loss
    /// n(μ − ȳ)² / (2σ²).
    pub fn to_grid(&self, atoms: usize, half_width: f64) -> Result<(Vec<f64>, FiniteBlockProblem)> {
        self.validate()?;
        if atoms < 2 {
            return Err(Error::domain("normal_normal", "grid needs at least two atoms"));
        }
        let sd0 = self.sigma0_sq.sqrt();
        let lo = self.mu0 - half_width * sd0;
        let step = 2.0 * half_width * sd0 / (atoms - 1) as f64;
        let grid: Vec<f64> = (0..atoms).map(|i| lo + step * i as f64).collect();
        let lw: Vec<f64> = grid.iter().map(|mu| -(mu - self.mu0).powi(2) / (2.0 * self.sigma0_sq)).collect();
        let m = lw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = lw.iter().map(|l| (l - m).exp()).collect();
        let s: f64 = w.iter().sum();
        let prior = w.iter().map(|x| x / s).collect();
        let loss = grid.iter().map(|mu| self.n as f64 * (mu - self.ybar).powi(2) / (2.0 * self.sigma_sq)).collect();
        let problem = FiniteBlockProblem::new(vec![grid.clone()], vec![vec![prior]], vec![loss], vec![self.gamma_mu])?;
        Ok((grid, problem))
    }
}

/// σ_q² = (n/(γσ²) + 1/σ0²)⁻¹ and μ_q = α μ0 + (1 − α) ȳ.
pub fn normal_normal_sou(p: &NormalNormalProblem) -> Result<NormalNormalPosterior> {
    p.validate()?;
    let prior_precision = 1.0 / p.sigma0_sq;
    let total = prior_precision + p.data_precision();
    let alpha = prior_precision / total;
    Ok(NormalNormalPosterior { mu_q: alpha * p.mu0 + (1.0 - alpha) * p.ybar, sigma_q_sq: 1.0 / total, alpha })
}

/// The normal-normal objective in (μ_q, σ_q²) as a coordinate model: an
/// explicit mean update, and the variance from a root solve on its
/// stationarity equation.
pub struct NormalNormalModel(pub NormalNormalProblem);

const NN_COORDS: [Coordinate; 2] = [Coordinate::explicit("mu_q"), Coordinate::equation("sigma_q_sq")];

impl CoordinateModel for NormalNormalModel {
    type State = (f64, f64);

    fn coordinates(&self) -> &[Coordinate] {
        &NN_COORDS
    }

    /// Deliberately off the optimum: (μ0 + 5, 3).
    fn initial_state(&self) -> Result<(f64, f64)> {
        self.0.validate()?;
        Ok((self.0.mu0 + 5.0, 3.0))
    }

    fn update(&self, index: usize, state: &mut (f64, f64), cfg: &SolverConfig) -> Result<f64> {
        let p = &self.0;
        let n = p.n as f64;
        match index {
            0 => {
                let a = n / p.sigma_sq;
                let b = p.gamma_mu / p.sigma0_sq;
                state.0 = (a * p.ybar + b * p.mu0) / (a + b);
                Ok(0.0)
            }
            1 => {
                let g = |s: f64| n / (2.0 * p.sigma_sq) + 0.5 * p.gamma_mu * (1.0 / p.sigma0_sq - 1.0 / s);
                let root = safeguarded_root(g, |s| 0.5 * p.gamma_mu / (s * s), (1e-12, 1e6), cfg)?;
                state.1 = root.x;
                Ok(root.residual)
            }
            _ => Err(Error::InvalidProblem(format!("no coordinate {index}"))),
        }
    }

    /// n((μ − ȳ)² + σ²)/(2σ_y²) + γ KL(N(μ, σ²) ‖ N(μ0, σ0²)).
    fn objective(&self, &(m, s): &(f64, f64)) -> Result<f64> {
        let p = &self.0;
        let n = p.n as f64;
        let loss = n * ((m - p.ybar).powi(2) + s) / (2.0 * p.sigma_sq);
        let kl = 0.5 * ((s + (m - p.mu0).powi(2)) / p.sigma0_sq - 1.0 + (p.sigma0_sq / s).ln());
        Ok(loss + p.gamma_mu * kl)
    }

    fn parameters(&self, state: &(f64, f64), out: &mut Vec<f64>) {
        out.extend([state.0, state.1]);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Figure1Row {
    /// `sigma0` for the prior-informativeness panel, `gamma` for the
    /// confidence panel.
    pub setting: String,
    pub param_value: f64,
    pub mu_q: f64,
    pub sigma_q_sq: f64,
}

/// Varies σ0 at γ = 1, then γ_μ at the base prior.
pub fn figure1_sweep(base: &NormalNormalProblem, sigma0_grid: &[f64], gamma_grid: &[f64]) -> Result<Vec<Figure1Row>> {
    let mut rows = Vec::with_capacity(sigma0_grid.len() + gamma_grid.len());
    for &s0 in sigma0_grid {
        let p = NormalNormalProblem { sigma0_sq: s0 * s0, gamma_mu: 1.0, ..*base };
        let post = normal_normal_sou(&p)?;
        rows.push(Figure1Row {
            setting: "sigma0".into(),
            param_value: s0,
            mu_q: post.mu_q,
            sigma_q_sq: post.sigma_q_sq,
        });
    }
    for &g in gamma_grid {
        let p = NormalNormalProblem { gamma_mu: g, ..*base };
        let post = normal_normal_sou(&p)?;
        rows.push(Figure1Row { setting: "gamma".into(), param_value: g, mu_q: post.mu_q, sigma_q_sq: post.sigma_q_sq });
    }
    Ok(rows)
}

pub fn figure1_csv(rows: &[Figure1Row]) -> String {
    let mut out = String::from("setting,param_value,mu_q,sigma_q_sq\n");
    for r in rows {
        out.push_str(&format!("{},{:e},{:e},{:e}\n", r.setting, r.param_value, r.mu_q, r.sigma_q_sq));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> NormalNormalProblem {
        NormalNormalProblem { mu0: 0.0, sigma0_sq: 1.0, sigma_sq: 1.0, ybar: 2.0, n: 4, gamma_mu: 2.0 }
    }

    #[test]
    fn classical_pseudo_count() {
        let u = TemperedConjugateUpdate { n0: 2.0, t0: vec![0.0], n: 10, sum_t: vec![3.0], gamma: 1.0 };
        assert_eq!(tempered_conjugate_update(&u).unwrap().n_n, 12.0);
    }

    #[test]
    fn tempered_arithmetic() {
        let u = TemperedConjugateUpdate { n0: 2.0, t0: vec![0.5], n: 8, sum_t: vec![8.0], gamma: 2.0 };
        let post = tempered_conjugate_update(&u).unwrap();
        assert_eq!(post.n_n, 6.0);
        assert!((post.alpha - 1.0 / 3.0).abs() < 1e-15);
        assert!((post.t_n[0] - 5.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn prior_dominant_and_empty_data() {
        let u = TemperedConjugateUpdate { n0: 2.0, t0: vec![0.5, -1.0], n: 8, sum_t: vec![8.0, 4.0], gamma: 1e9 };
        let post = tempered_conjugate_update(&u).unwrap();
        assert!((1.0 - post.alpha) < 1e-8);
        assert!((post.t_n[0] - 0.5).abs() < 1e-8 && (post.t_n[1] + 1.0).abs() < 1e-8);
        let empty = TemperedConjugateUpdate { n: 0, ..u };
        let post = tempered_conjugate_update(&empty).unwrap();
        assert_eq!(post.alpha, 1.0);
        assert_eq!(post.t_n, vec![0.5, -1.0]);
    }

    #[test]
    fn normal_normal_arithmetic() {
        let post = normal_normal_sou(&base()).unwrap();
        assert!((post.sigma_q_sq - 1.0 / 3.0).abs() < 1e-15);
        assert!((post.mu_q - 4.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn unit_gamma_is_conjugate_bayes() {
        let p = NormalNormalProblem { mu0: 1.0, sigma0_sq: 2.0, sigma_sq: 3.0, ybar: -0.5, n: 7, gamma_mu: 1.0 };
        let post = normal_normal_sou(&p).unwrap();
        let prec = 1.0 / 2.0 + 7.0 / 3.0;
        assert!((post.sigma_q_sq - 1.0 / prec).abs() < 1e-15);
        assert!((post.mu_q - (1.0 / 2.0 + 7.0 * -0.5 / 3.0) / prec).abs() < 1e-14);
    }

    #[test]
    fn limits() {
        let data = normal_normal_sou(&NormalNormalProblem { gamma_mu: 1e-9, ..base() }).unwrap();
        assert!((data.mu_q - 2.0).abs() < 1e-6);
        assert!(data.sigma_q_sq < 1e-8);
        let tight = normal_normal_sou(&NormalNormalProblem { sigma0_sq: 1e-8, gamma_mu: 1.0, ..base() }).unwrap();
        assert!(tight.mu_q.abs() < 1e-6);
        let prior = normal_normal_sou(&NormalNormalProblem { gamma_mu: 1e8, ..base() }).unwrap();
        assert!(prior.mu_q.abs() < 1e-6 && (prior.sigma_q_sq - 1.0).abs() < 1e-6);
    }

    #[test]
    fn alpha_is_monotone() {
        let mut last = 0.0;
        for e in -6..=6 {
            let a = normal_normal_sou(&NormalNormalProblem { gamma_mu: 10f64.powi(e), ..base() }).unwrap().alpha;
            assert!(a > last);
            last = a;
        }
        let mut last = 0.0;
        for e in (-6..=6).rev() {
            let a = normal_normal_sou(&NormalNormalProblem { sigma0_sq: 10f64.powi(e), ..base() }).unwrap().alpha;
            assert!(a > last);
            last = a;
        }
    }

    #[test]
    fn sweep_csv_shape() {
        let rows = figure1_sweep(&base(), &[0.1, 1.0], &[0.5, 1.0, 2.0]).unwrap();
        assert_eq!(rows.len(), 5);
        let csv = figure1_csv(&rows);
        assert!(csv.starts_with("setting,param_value,mu_q,sigma_q_sq\n"));
        assert_eq!(csv.lines().count(), 6);
    }

    #[test]
    fn rejects_invalid() {
        assert!(normal_normal_sou(&NormalNormalProblem { sigma_sq: 0.0, ..base() }).is_err());
        assert!(normal_normal_sou(&NormalNormalProblem { n: 0, ..base() }).is_err());
        let u = TemperedConjugateUpdate { n0: 2.0, t0: vec![0.0], n: 1, sum_t: vec![1.0, 2.0], gamma: 1.0 };
        assert!(matches!(tempered_conjugate_update(&u), Err(Error::Dimension(_))));
    }
}
