//! Coordinate fixed-point driver and the scalar root finder used for the
//! shape equations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Initial upper end of a shape-equation bracket.
pub const SHAPE_BRACKET_HI: f64 = 1e6;
/// The bracket is widened by factors of ten up to this value.
pub const SHAPE_BRACKET_LIMIT: f64 = 1e12;

const WIDTH_TOL: f64 = 1e-14;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Sweeps stop once no parameter moves by more than this.
    pub tol: f64,
    pub max_iters: usize,
    pub newton_tol: f64,
    pub newton_max: usize,
    /// Lower bound 1 + δ for Inverse-Gamma shapes.
    pub shape_floor: f64,
    /// Allowed per-sweep objective increase, relative to max(1, |J|).
    pub monotonicity_slack: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tol: 1e-8,
            max_iters: 5000,
            newton_tol: 1e-10,
            newton_max: 100,
            shape_floor: 1.001,
            monotonicity_slack: 1e-6,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.tol, self.newton_tol, self.monotonicity_slack];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) || self.newton_max == 0 {
            return Err(Error::InvalidProblem("solver tolerances and caps must be positive".into()));
        }
        if !(self.shape_floor.is_finite() && self.shape_floor > 1.0) {
            return Err(Error::InvalidProblem(format!("shape_floor must exceed 1, got {}", self.shape_floor)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquationResidual {
    pub coordinate: String,
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub iterations: usize,
    /// Largest absolute parameter change in the last sweep.
    pub final_change: f64,
    /// Objective at the initial state and after every sweep.
    pub objective_trace: Vec<f64>,
    pub change_trace: Vec<f64>,
    pub converged: bool,
    /// Largest residual of each equation update in the last sweep.
    pub residuals: Vec<EquationResidual>,
}

impl ConvergenceReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).unwrap_or_default()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum UpdateKind {
    Explicit,
    Equation,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Coordinate {
    pub name: &'static str,
    pub kind: UpdateKind,
}

impl Coordinate {
    pub const fn explicit(name: &'static str) -> Self {
        Coordinate { name, kind: UpdateKind::Explicit }
    }

    pub const fn equation(name: &'static str) -> Self {
        Coordinate { name, kind: UpdateKind::Equation }
    }
}

/// A model the driver can sweep: an ordered list of coordinate updates, an
/// objective and a flat view of its parameters.
pub trait CoordinateModel {
    type State: Clone;

    fn coordinates(&self) -> &[Coordinate];

    fn initial_state(&self) -> Result<Self::State>;

    /// Applies update `index` in place. Equation updates return their largest
    /// projected residual; explicit updates return 0.
    fn update(&self, index: usize, state: &mut Self::State, cfg: &SolverConfig) -> Result<f64>;

    fn objective(&self, state: &Self::State) -> Result<f64>;

    /// Appends every variational parameter to `out`.
    fn parameters(&self, state: &Self::State, out: &mut Vec<f64>);
}

/// One full sweep over every coordinate, in order.
pub fn sweep<M: CoordinateModel>(model: &M, state: &mut M::State, cfg: &SolverConfig) -> Result<Vec<f64>> {
    let coords = model.coordinates();
    let mut residuals = vec![0.0; coords.len()];
    for (i, c) in coords.iter().enumerate() {
        residuals[i] = model.update(i, state, cfg).map_err(|e| e.in_coordinate(c.name))?;
    }
    Ok(residuals)
}

pub fn run_fixed_point<M: CoordinateModel>(model: &M, cfg: &SolverConfig) -> Result<(M::State, ConvergenceReport)> {
    let init = model.initial_state()?;
    run_fixed_point_from(model, init, cfg)
}

pub fn run_fixed_point_from<M: CoordinateModel>(
    model: &M,
    mut state: M::State,
    cfg: &SolverConfig,
) -> Result<(M::State, ConvergenceReport)> {
    cfg.validate()?;
    let coords = model.coordinates();
    let j0 = model.objective(&state)?;
    if !j0.is_finite() {
        return Err(Error::Divergence {
            sweep: 0,
            coordinate: "initial state".into(),
            detail: format!("objective {j0}"),
        });
    }
    let mut report = ConvergenceReport {
        iterations: 0,
        final_change: f64::INFINITY,
        objective_trace: vec![j0],
        change_trace: Vec::new(),
        converged: false,
        residuals: Vec::new(),
    };
    let mut prev = Vec::new();
    let mut cur = Vec::new();
    model.parameters(&state, &mut prev);
    let mut residuals = vec![0.0; coords.len()];
    for t in 1..=cfg.max_iters {
        for (i, c) in coords.iter().enumerate() {
            residuals[i] = model.update(i, &mut state, cfg).map_err(|e| match e {
                Error::Divergence { .. } => e,
                other => other.in_coordinate(c.name),
            })?;
            cur.clear();
            model.parameters(&state, &mut cur);
            if let Some(bad) = cur.iter().find(|v| !v.is_finite()) {
                return Err(Error::Divergence {
                    sweep: t,
                    coordinate: c.name.into(),
                    detail: format!("parameter became {bad}"),
                });
            }
        }
        let j = model.objective(&state)?;
        if !j.is_finite() {
            let last = coords.last().map_or("", |c| c.name);
            return Err(Error::Divergence { sweep: t, coordinate: last.into(), detail: format!("objective {j}") });
        }
        let j_prev = report.objective_trace[t - 1];
        let slack = cfg.monotonicity_slack * j_prev.abs().max(1.0);
        if j - j_prev > slack {
            return Err(Error::ObjectiveIncrease { sweep: t, increase: j - j_prev, slack });
        }
        let change = prev.iter().zip(&cur).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        report.objective_trace.push(j);
        report.change_trace.push(change);
        report.iterations = t;
        report.final_change = change;
        std::mem::swap(&mut prev, &mut cur);
        if change < cfg.tol {
            report.converged = true;
            break;
        }
    }
    report.residuals = coords
        .iter()
        .zip(&residuals)
        .filter(|(c, _)| c.kind == UpdateKind::Equation)
        .map(|(c, r)| EquationResidual { coordinate: c.name.into(), residual: *r })
        .collect();
    Ok((state, report))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Root {
    pub x: f64,
    pub residual: f64,
    pub iterations: usize,
}

fn midpoint(lo: f64, hi: f64) -> f64 {
    if lo > 0.0 && hi > 4.0 * lo {
        (lo * hi).sqrt()
    } else {
        0.5 * (lo + hi)
    }
}

/// Newton's method kept inside a shrinking sign-change bracket. Steps that
/// leave the bracket or fail to halve the previous step fall back to
/// bisection, geometric when the bracket spans a wide positive range.
pub fn safeguarded_root<G, D>(g: G, g_prime: D, bracket: (f64, f64), cfg: &SolverConfig) -> Result<Root>
where
    G: Fn(f64) -> f64,
    D: Fn(f64) -> f64,
{
    let (mut lo, mut hi) = if bracket.0 <= bracket.1 { bracket } else { (bracket.1, bracket.0) };
    let g_lo = g(lo);
    let g_hi = g(hi);
    if !(g_lo.is_finite() && g_hi.is_finite()) {
        return Err(Error::domain("safeguarded_root", format!("g({lo}) = {g_lo}, g({hi}) = {g_hi}")));
    }
    if g_lo == 0.0 {
        return Ok(Root { x: lo, residual: 0.0, iterations: 0 });
    }
    if g_hi == 0.0 {
        return Ok(Root { x: hi, residual: 0.0, iterations: 0 });
    }
    if (g_lo > 0.0) == (g_hi > 0.0) {
        return Err(Error::Bracketing { lo, hi, g_lo, g_hi });
    }
    let lo_negative = g_lo < 0.0;
    let mut x = midpoint(lo, hi);
    let mut step_old = hi - lo;
    let mut step = step_old;
    let mut gx = f64::NAN;
    for it in 1..=cfg.newton_max {
        gx = g(x);
        if !gx.is_finite() {
            return Err(Error::domain("safeguarded_root", format!("g({x}) = {gx}")));
        }
        if gx.abs() <= cfg.newton_tol {
            return Ok(Root { x, residual: gx.abs(), iterations: it });
        }
        if (gx < 0.0) == lo_negative {
            lo = x;
        } else {
            hi = x;
        }
        if hi - lo <= WIDTH_TOL * x.abs().max(1.0) {
            return Ok(Root { x, residual: gx.abs(), iterations: it });
        }
        let d = g_prime(x);
        let newton = x - gx / d;
        let too_slow = (gx / d).abs() * 2.0 > step_old.abs();
        step_old = step;
        if newton.is_finite() && newton > lo && newton < hi && !too_slow {
            step = x - newton;
            x = newton;
        } else {
            let mid = midpoint(lo, hi);
            step = x - mid;
            x = mid;
        }
    }
    Err(Error::RootNonConvergence { iterations: cfg.newton_max, residual: gx.abs(), x })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShapeSolution {
    pub value: f64,
    /// |∂J/∂a| at an interior root, 0 at the floor.
    pub residual: f64,
    pub at_floor: bool,
}

/// Minimises over a ≥ shape_floor a function whose derivative `grad` has at
/// most one sign change from negative to positive.
pub fn solve_shape<G, D>(grad: G, grad_prime: D, cfg: &SolverConfig) -> Result<ShapeSolution>
where
    G: Fn(f64) -> f64,
    D: Fn(f64) -> f64,
{
    let lo = cfg.shape_floor;
    let g_lo = grad(lo);
    if g_lo.is_nan() {
        return Err(Error::domain("solve_shape", format!("gradient is NaN at the floor {lo}")));
    }
    if g_lo >= 0.0 {
        return Ok(ShapeSolution { value: lo, residual: 0.0, at_floor: true });
    }
    let mut hi = SHAPE_BRACKET_HI;
    loop {
        let g_hi = grad(hi);
        if g_hi > 0.0 {
            break;
        }
        if g_hi == 0.0 {
            return Ok(ShapeSolution { value: hi, residual: 0.0, at_floor: false });
        }
        if hi >= SHAPE_BRACKET_LIMIT {
            return Err(Error::Bracketing { lo, hi, g_lo, g_hi });
        }
        hi = (hi * 10.0).min(SHAPE_BRACKET_LIMIT);
    }
    let root = safeguarded_root(&grad, &grad_prime, (lo, hi), cfg)?;
    Ok(ShapeSolution { value: root.x, residual: root.residual, at_floor: false })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::special::digamma;

    fn cfg() -> SolverConfig {
        SolverConfig::default()
    }

    #[test]
    fn sqrt_two() {
        let r = safeguarded_root(|x| x * x - 2.0, |x| 2.0 * x, (1.0, 2.0), &cfg()).unwrap();
        assert!((r.x - 2f64.sqrt()).abs() < 1e-10);
    }

    #[test]
    fn digamma_root_matches_bisection() {
        let g = |x: f64| digamma(x).unwrap() - 1.0;
        let (mut lo, mut hi) = (1.0, 10.0);
        while hi - lo > 1e-12 {
            let mid = 0.5 * (lo + hi);
            if g(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let r = safeguarded_root(g, |x| crate::special::trigamma(x).unwrap(), (1.0, 10.0), &cfg()).unwrap();
        assert!(r.residual <= 1e-10);
        assert!((r.x - 0.5 * (lo + hi)).abs() < 1e-9);
    }

    #[test]
    fn same_sign_is_bracketing_error() {
        let e = safeguarded_root(|x| x * x + 1.0, |x| 2.0 * x, (-1.0, 1.0), &cfg()).unwrap_err();
        assert!(matches!(e, Error::Bracketing { .. }));
    }

    #[test]
    fn bad_derivative_falls_back_to_bisection() {
        let r = safeguarded_root(|x: f64| x.powi(3) - 0.001, |_| 1e-30, (0.0, 1.0), &cfg()).unwrap();
        assert!((r.x - 0.1).abs() < 1e-8);
    }

    #[test]
    fn iteration_cap_reports_residual() {
        let tight = SolverConfig { newton_max: 3, ..cfg() };
        let e = safeguarded_root(|x: f64| x.powi(3) - 0.001, |_| 1e-30, (0.0, 1.0), &tight).unwrap_err();
        assert!(matches!(e, Error::RootNonConvergence { iterations: 3, .. }));
    }

    #[test]
    fn wide_bracket_converges() {
        let r = safeguarded_root(|x: f64| x.ln() - 20.0, |x| 1.0 / x, (1.001, 1e12), &cfg()).unwrap();
        assert!((r.x.ln() - 20.0).abs() < 1e-10);
    }

    #[test]
    fn shape_at_floor_and_widened() {
        let s = solve_shape(|a| a - 0.5, |_| 1.0, &cfg()).unwrap();
        assert!(s.at_floor && s.value == 1.001);
        let s = solve_shape(|a| a - 3e8, |_| 1.0, &cfg()).unwrap();
        assert!(!s.at_floor && (s.value - 3e8).abs() < 1e-3);
        let e = solve_shape(|a| a - 1e13, |_| 1.0, &cfg()).unwrap_err();
        assert!(matches!(e, Error::Bracketing { .. }));
    }
}
