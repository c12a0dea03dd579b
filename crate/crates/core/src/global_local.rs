//! Pieces shared by the three global-local models: Inverse-Gamma expectations,
//! the KL terms of the scale blocks, the rate updates and the shape
//! equations.

use crate::error::Result;
use crate::solver::{solve_shape, ShapeSolution, SolverConfig};
use crate::special::{digamma_pos, log_gamma_pos, tetragamma_pos, trigamma_pos};

/// E[log x] under Inv-Gamma(a, b).
pub fn expected_log(a: f64, b: f64) -> f64 {
    b.ln() - digamma_pos(a)
}

/// KL(Inv-Gamma(a, b) ‖ Exp(λ)) on the variance scale. Needs a > 1.
pub fn ig_exp_kl(a: f64, b: f64, lambda: f64) -> f64 {
    a * b.ln() - log_gamma_pos(a) - (a + 1.0) * expected_log(a, b) - a - lambda.ln() + lambda * b / (a - 1.0)
}

/// ∂/∂a of [`ig_exp_kl`].
pub fn ig_exp_kl_da(a: f64, b: f64, lambda: f64) -> f64 {
    (a + 1.0) * trigamma_pos(a) - 1.0 - lambda * b / ((a - 1.0) * (a - 1.0))
}

pub fn ig_exp_kl_da2(a: f64, b: f64, lambda: f64) -> f64 {
    trigamma_pos(a) + (a + 1.0) * tetragamma_pos(a) + 2.0 * lambda * b / (a - 1.0).powi(3)
}

/// KL(Inv-Gamma(a, b) ‖ Inv-Gamma(a0, b0)).
pub fn ig_ig_kl(a: f64, b: f64, a0: f64, b0: f64) -> f64 {
    a * b.ln() - a0 * b0.ln() + log_gamma_pos(a0) - log_gamma_pos(a)
        + expected_log(a, b) * (a0 - a)
        + (a / b) * (b0 - b)
}

pub fn ig_ig_kl_da(a: f64, b: f64, a0: f64, b0: f64) -> f64 {
    -trigamma_pos(a) * (a0 - a) + b0 / b - 1.0
}

pub fn ig_ig_kl_da2(a: f64, a0: f64) -> f64 {
    -tetragamma_pos(a) * (a0 - a) + trigamma_pos(a)
}

/// Positive root b of (γλ/(a−1)) b² − c b − w/2 = 0, the stationarity
/// condition for the rate of a scale block with an Exp(λ) prior. Here
/// c = γ − (count·γ_β)/2 and `w` collects γ_β times the expected precision
/// weight of the coefficients the scale governs.
///
/// For c < 0 the root is evaluated as w / (√(c² + e) − c), which avoids the
/// cancellation and the 0/0 of the textbook form as γ → 0.
pub fn scale_rate(a: f64, c: f64, w: f64, lambda: f64, gamma: f64) -> f64 {
    let e = 2.0 * lambda * gamma * w / (a - 1.0);
    let disc = (c * c + e).sqrt();
    if c < 0.0 {
        w / (disc - c)
    } else {
        (a - 1.0) * (c + disc) / (2.0 * lambda * gamma)
    }
}

/// The same root in textbook form.
pub fn scale_rate_naive(a: f64, c: f64, w: f64, lambda: f64, gamma: f64) -> f64 {
    let e = 2.0 * lambda * gamma * w / (a - 1.0);
    (c * (a - 1.0) + (a - 1.0) * (c * c + e).sqrt()) / (2.0 * lambda * gamma)
}

/// Shape of a scale block with an Exp(λ) prior. The objective's dependence
/// on a is (γ_β/2)(a·`k_sum` − `count`·ψ(a)) + γ·KL(IG(a, b) ‖ Exp(λ)).
pub fn scale_shape(
    k_sum: f64,
    count: f64,
    gamma_beta: f64,
    gamma: f64,
    b: f64,
    lambda: f64,
    cfg: &SolverConfig,
) -> Result<ShapeSolution> {
    let half = 0.5 * gamma_beta;
    solve_shape(
        |a| half * (k_sum - count * trigamma_pos(a)) + gamma * ig_exp_kl_da(a, b, lambda),
        |a| -half * count * tetragamma_pos(a) + gamma * ig_exp_kl_da2(a, b, lambda),
        cfg,
    )
}

/// Shape of the noise variance. The objective's dependence on a is
/// −(`count`/2)ψ(a) + a·`r`/(2b) + γ_σ·KL(IG(a, b) ‖ IG(a0, b0)).
pub fn noise_shape(
    count: f64,
    r: f64,
    b: f64,
    gamma_sigma: f64,
    a0: f64,
    b0: f64,
    cfg: &SolverConfig,
) -> Result<ShapeSolution> {
    solve_shape(
        |a| -0.5 * count * trigamma_pos(a) + r / (2.0 * b) + gamma_sigma * ig_ig_kl_da(a, b, a0, b0),
        |a| -0.5 * count * tetragamma_pos(a) + gamma_sigma * ig_ig_kl_da2(a, a0),
        cfg,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kl_derivatives_match_differences() {
        let h = 1e-6;
        for &(a, b, l) in &[(1.5, 0.3, 10.0), (3.0, 2.0, 1.0), (40.0, 7.0, 0.5)] {
            let fd = (ig_exp_kl(a + h, b, l) - ig_exp_kl(a - h, b, l)) / (2.0 * h);
            assert!((fd - ig_exp_kl_da(a, b, l)).abs() < 1e-6 * fd.abs().max(1.0));
            let fd2 = (ig_exp_kl_da(a + h, b, l) - ig_exp_kl_da(a - h, b, l)) / (2.0 * h);
            assert!((fd2 - ig_exp_kl_da2(a, b, l)).abs() < 1e-5 * fd2.abs().max(1.0));
            let fd = (ig_ig_kl(a + h, b, 3.0, 2.0) - ig_ig_kl(a - h, b, 3.0, 2.0)) / (2.0 * h);
            assert!((fd - ig_ig_kl_da(a, b, 3.0, 2.0)).abs() < 1e-6 * fd.abs().max(1.0));
        }
    }

    #[test]
    fn ig_kl_vanishes_at_prior() {
        assert!(ig_ig_kl(3.0, 2.0, 3.0, 2.0).abs() < 1e-14);
        assert!(ig_ig_kl(2.5, 1.0, 3.0, 2.0) > 0.0);
    }

    #[test]
    fn rate_forms_agree_when_well_conditioned() {
        for &(a, c, w, l, g) in
            &[(2.0, -0.49, 3.0, 10.0, 0.01), (5.0, 0.5, 0.1, 10.0, 1.0), (1.2, -10.0, 2.0, 1.0, 1.0)]
        {
            let s = scale_rate(a, c, w, l, g);
            let n = scale_rate_naive(a, c, w, l, g);
            assert!(((s - n) / n).abs() < 1e-12, "{s} vs {n}");
        }
    }

    #[test]
    fn rate_root_solves_quadratic() {
        let (a, c, w, l, g) = (2.5, 1e-9 - 0.5, 4.0, 10.0, 1e-9);
        let b = scale_rate(a, c, w, l, g);
        let resid = g * l / (a - 1.0) * b * b - c * b - 0.5 * w;
        assert!(resid.abs() < 1e-12 * (c * b).abs());
        assert!(scale_rate_naive(a, c, w, l, g).is_finite());
    }
}
