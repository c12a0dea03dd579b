//! Exact-oracle checks on the finite-grid solver, the conjugate algebra and
//! the fixed-point driver. Each check returns a [`Check`] with its verdict
//! and measured worst case.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sou_core::conjugate::{
    normal_normal_sou, tempered_conjugate_update, NormalNormalModel, NormalNormalProblem, TemperedConjugateUpdate,
};
use sou_core::grid_oracle::{
    backward_recursion, collapse_sweep, decomposition_check, evaluate_objective, sample, FiniteBlockProblem,
};
use sou_core::solver::{run_fixed_point, SolverConfig};
use sou_core::Result;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub id: u8,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(id: u8, name: &'static str, passed: bool, detail: String) -> Self {
        Check { id, name, passed, detail }
    }

    fn from_result(id: u8, name: &'static str, r: Result<(bool, String)>) -> Self {
        match r {
            Ok((passed, detail)) => Check::new(id, name, passed, detail),
            Err(e) => Check::new(id, name, false, format!("error: {e}")),
        }
    }

    pub fn line(&self) -> String {
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        format!("{verdict} [{:>2}] {}: {}", self.id, self.name, self.detail)
    }
}

/// ∝ prior · exp(−loss/γ), normalised.
pub fn tempered_gibbs(prior: &[f64], loss: &[f64], gamma: f64) -> Vec<f64> {
    let shift = loss.iter().copied().fold(f64::INFINITY, f64::min);
    let w: Vec<f64> = prior.iter().zip(loss).map(|(p, l)| p * (-(l - shift) / gamma).exp()).collect();
    let s: f64 = w.iter().sum();
    w.iter().map(|x| x / s).collect()
}

fn random_simplex(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 0.01).collect();
    let s: f64 = w.iter().sum();
    w.iter().map(|x| x / s).collect()
}

pub fn grid_optimality(seed: u64) -> Check {
    let start = Instant::now();
    let r = (|| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst = f64::NEG_INFINITY;
        for _ in 0..20 {
            let k = rng.random_range(1..=3);
            let p = sample::problem(&mut rng, k, 8)?;
            let j_star = evaluate_objective(&p, &backward_recursion(&p)?)?;
            for _ in 0..500 {
                let q = sample::distribution(&mut rng, &p);
                worst = worst.max(j_star - evaluate_objective(&p, &q)?);
            }
        }
        let secs = start.elapsed().as_secs_f64();
        Ok((worst <= 1e-12 && secs < 10.0, format!("max J(q*) - J(q) = {worst:.3e} over 10000 candidates, {secs:.2}s")))
    })();
    Check::from_result(1, "grid oracle optimality", r)
}

pub fn product_factorisation(seed: u64) -> Check {
    let r = (|| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst: f64 = 0.0;
        for _ in 0..20 {
            let k = rng.random_range(2..=3);
            let sizes: Vec<usize> = (0..k).map(|_| rng.random_range(2..=8)).collect();
            let marginals: Vec<Vec<f64>> = sizes.iter().map(|&n| random_simplex(&mut rng, n)).collect();
            let losses: Vec<Vec<f64>> =
                sizes.iter().map(|&n| (0..n).map(|_| 3.0 * rng.random::<f64>()).collect()).collect();
            let gammas: Vec<f64> = (0..k).map(|_| 10f64.powf(rng.random_range(-1.0..1.0))).collect();
            let p = FiniteBlockProblem::product(marginals.clone(), losses.clone(), gammas.clone())?;
            let q = backward_recursion(&p)?;
            for b in 0..k {
                let expect = tempered_gibbs(&marginals[b], &losses[b], gammas[b]);
                for row in &q.kernels[b] {
                    for (x, y) in row.iter().zip(&expect) {
                        worst = worst.max((x - y).abs());
                    }
                }
            }
        }
        Ok((worst <= 1e-12, format!("max entrywise gap {worst:.3e} over 20 problems")))
    })();
    Check::from_result(2, "product-prior factorisation", r)
}

pub fn decomposition(seed: u64) -> Check {
    let r = (|| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let k = rng.random_range(1..=3);
            let p = sample::problem(&mut rng, k, 6)?;
            let a = sample::distribution(&mut rng, &p);
            let b = sample::distribution(&mut rng, &p);
            worst = worst.max(decomposition_check(&p, &a, &b)?);
        }
        Ok((worst <= 1e-10, format!("max |difference mismatch| {worst:.3e} over 100 pairs")))
    })();
    Check::from_result(3, "location-dispersion decomposition", r)
}

pub fn collapse(seed: u64) -> Check {
    let r = (|| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scales: Vec<f64> = (0..=6).map(|e| 10f64.powi(-e)).collect();
        let (mut loss_gap, mut kl): (f64, f64) = (0.0, 0.0);
        for _ in 0..10 {
            let k = rng.random_range(1..=3);
            let p = sample::problem(&mut rng, k, 8)?;
            let sweep = collapse_sweep(&p, &scales)?;
            let last = sweep.last().expect("non-empty sweep");
            loss_gap = loss_gap.max((last.expected_loss - p.min_loss()).abs());
            kl = kl.max(last.weighted_kl);
        }
        Ok((
            loss_gap <= 1e-4 && kl < 1e-4,
            format!("at c = 1e-6: max |E[L] - min L| = {loss_gap:.3e}, max weighted KL = {kl:.3e}"),
        ))
    })();
    Check::from_result(4, "objective collapse", r)
}

fn grid_moments(p: &NormalNormalProblem) -> Result<(f64, f64)> {
    let (grid, problem) = p.to_grid(2001, 8.0)?;
    let q = backward_recursion(&problem)?;
    let w = &q.kernels[0][0];
    let mean: f64 = grid.iter().zip(w).map(|(x, w)| x * w).sum();
    let var: f64 = grid.iter().zip(w).map(|(x, w)| (x - mean).powi(2) * w).sum();
    Ok((mean, var))
}

pub fn normal_normal_cases() -> Vec<NormalNormalProblem> {
    [(1.0, 4, 2.0), (2.0, 10, -1.0), (0.5, 3, 0.7), (5.0, 1, 3.0), (1e-2, 50, 0.4)]
        .iter()
        .map(|&(gamma_mu, n, ybar)| NormalNormalProblem { mu0: 0.3, sigma0_sq: 1.5, sigma_sq: 2.0, ybar, n, gamma_mu })
        .collect()
}

pub fn conjugate_algebra(seed: u64) -> Check {
    let r = (|| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut exact = true;
        for _ in 0..200 {
            let n0 = 10f64.powf(rng.random_range(-2.0..2.0));
            let gamma = 10f64.powf(rng.random_range(-3.0..3.0));
            let n = rng.random_range(1..500usize);
            let u = TemperedConjugateUpdate {
                n0,
                t0: vec![rng.random_range(-5.0..5.0)],
                n,
                sum_t: vec![rng.random_range(-100.0..100.0)],
                gamma,
            };
            let post = tempered_conjugate_update(&u)?;
            let nf = n as f64;
            exact &= post.n_n == n0 + nf / gamma && post.alpha == gamma * n0 / (gamma * n0 + nf);
        }
        let (mut dm, mut dv): (f64, f64) = (0.0, 0.0);
        for p in normal_normal_cases() {
            let closed = normal_normal_sou(&p)?;
            let (mean, var) = grid_moments(&p)?;
            dm = dm.max((mean - closed.mu_q).abs());
            dv = dv.max((var - closed.sigma_q_sq).abs() / closed.sigma_q_sq);
        }
        Ok((
            exact && dm <= 1e-4 && dv <= 1e-3,
            format!("identities exact: {exact}; grid vs closed form: mean {dm:.3e}, variance {dv:.3e} relative"),
        ))
    })();
    Check::from_result(5, "conjugate algebra", r)
}

pub fn solver_vs_closed_form() -> Check {
    let r = (|| {
        let mut worst: f64 = 0.0;
        let mut converged = true;
        for p in normal_normal_cases() {
            let (state, report) = run_fixed_point(&NormalNormalModel(p), &SolverConfig::default())?;
            let exact = normal_normal_sou(&p)?;
            converged &= report.converged;
            worst = worst.max((state.0 - exact.mu_q).abs()).max((state.1 - exact.sigma_q_sq).abs());
        }
        Ok((converged && worst <= 1e-8, format!("max |fixed point - closed form| {worst:.3e}, converged: {converged}")))
    })();
    Check::from_result(6, "fixed-point solver vs closed form", r)
}

/// Checks 1 to 6 in order.
pub fn run_all(seed: u64) -> Vec<Check> {
    vec![
        grid_optimality(seed),
        product_factorisation(seed.wrapping_add(1)),
        decomposition(seed.wrapping_add(2)),
        collapse(seed.wrapping_add(3)),
        conjugate_algebra(seed.wrapping_add(4)),
        solver_vs_closed_form(),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gibbs_is_normalised_and_prefers_low_loss() {
        let q = tempered_gibbs(&[0.5, 0.5], &[0.0, 1.0], 1.0);
        assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(q[0] > q[1]);
    }

    #[test]
    fn lines_carry_verdict() {
        assert!(Check::new(3, "x", true, "ok".into()).line().starts_with("PASS [ 3]"));
        assert!(Check::new(12, "x", false, "no".into()).line().starts_with("FAIL [12]"));
    }
}
