//! Per-fit accuracy and sparsity summaries.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{BenchError, Result};

pub const THRESHOLDS: [f64; 3] = [1e-1, 1e-2, 1e-3];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    pub rmse: f64,
    /// Fraction of null coordinates with |β̂_j| below each of
    /// [`THRESHOLDS`]; `None` when there are no nulls.
    pub prop_lt: [Option<f64>; 3],
}

pub fn compute_metrics(beta_hat: &DVector<f64>, beta_true: &DVector<f64>) -> Result<Metrics> {
    if beta_hat.len() != beta_true.len() {
        return Err(BenchError::Config(format!(
            "estimate has {} coefficients, truth has {}",
            beta_hat.len(),
            beta_true.len()
        )));
    }
    let p = beta_true.len();
    let rmse = ((beta_hat - beta_true).norm_squared() / p as f64).sqrt();
    let nulls: Vec<f64> = (0..p).filter(|&j| beta_true[j] == 0.0).map(|j| beta_hat[j].abs()).collect();
    let prop_lt = THRESHOLDS
        .map(|eps| (!nulls.is_empty()).then(|| nulls.iter().filter(|&&v| v < eps).count() as f64 / nulls.len() as f64));
    Ok(Metrics { rmse, prop_lt })
}

/// √(mean((y − α − Xβ̂)²)) on held-out rows.
pub fn prediction_rmse(x: &DMatrix<f64>, y: &DVector<f64>, beta_hat: &DVector<f64>, intercept: f64) -> Option<f64> {
    (x.nrows() > 0).then(|| ((y - x * beta_hat).add_scalar(-intercept).norm_squared() / x.nrows() as f64).sqrt())
}

/// One fit of one method on one simulated data set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub experiment: String,
    pub n: usize,
    pub p: usize,
    pub s: Option<usize>,
    pub rho: Option<f64>,
    pub method: String,
    pub seed: u64,
    pub rmse: Option<f64>,
    pub pred_rmse: Option<f64>,
    pub prop_lt_1e1: Option<f64>,
    pub prop_lt_1e2: Option<f64>,
    pub prop_lt_1e3: Option<f64>,
    pub test_accuracy: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// `converged`, `max_iters` or `failed`.
    pub status: String,
    pub error: Option<String>,
    #[serde(skip)]
    pub runtime_ms: f64,
}

impl MetricsRecord {
    pub fn failed(&self) -> bool {
        self.status == STATUS_FAILED
    }

    pub fn set_metrics(&mut self, m: &Metrics) {
        self.rmse = Some(m.rmse);
        [self.prop_lt_1e1, self.prop_lt_1e2, self.prop_lt_1e3] = m.prop_lt;
    }
}

pub const STATUS_CONVERGED: &str = "converged";
pub const STATUS_MAX_ITERS: &str = "max_iters";
pub const STATUS_FAILED: &str = "failed";

/// Means over the non-failed records of one (setting, method) pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub experiment: String,
    pub n: usize,
    pub p: usize,
    pub s: Option<usize>,
    pub rho: Option<f64>,
    pub method: String,
    pub reps: usize,
    pub failed: usize,
    pub converged: usize,
    pub rmse: Option<f64>,
    pub pred_rmse: Option<f64>,
    pub prop_lt_1e1: Option<f64>,
    pub prop_lt_1e2: Option<f64>,
    pub prop_lt_1e3: Option<f64>,
    pub test_accuracy: Option<f64>,
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let (sum, count) = values.flatten().fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    (count > 0).then(|| sum / count as f64)
}

/// Groups records by setting and method, keeping
/// first-appearance order. `reps` counts the fits that did not fail.
pub fn aggregate(records: &[MetricsRecord]) -> Vec<AggregateRow> {
    type Key<'a> = (usize, usize, Option<usize>, Option<u64>, &'a str);
    let mut keys: Vec<Key> = Vec::new();
    fn key(r: &MetricsRecord) -> Key<'_> {
        (r.n, r.p, r.s, r.rho.map(f64::to_bits), r.method.as_str())
    }
    for r in records {
        if !keys.contains(&key(r)) {
            keys.push(key(r));
        }
    }
    keys.iter()
        .map(|k| {
            let group: Vec<&MetricsRecord> = records.iter().filter(|r| key(r) == *k).collect();
            let ok: Vec<&&MetricsRecord> = group.iter().filter(|r| !r.failed()).collect();
            let first = group[0];
            AggregateRow {
                experiment: first.experiment.clone(),
                n: first.n,
                p: first.p,
                s: first.s,
                rho: first.rho,
                method: first.method.clone(),
                reps: ok.len(),
                failed: group.len() - ok.len(),
                converged: ok.iter().filter(|r| r.converged).count(),
                rmse: mean_of(ok.iter().map(|r| r.rmse)),
                pred_rmse: mean_of(ok.iter().map(|r| r.pred_rmse)),
                prop_lt_1e1: mean_of(ok.iter().map(|r| r.prop_lt_1e1)),
                prop_lt_1e2: mean_of(ok.iter().map(|r| r.prop_lt_1e2)),
                prop_lt_1e3: mean_of(ok.iter().map(|r| r.prop_lt_1e3)),
                test_accuracy: mean_of(ok.iter().map(|r| r.test_accuracy)),
            }
        })
        .collect()
}
