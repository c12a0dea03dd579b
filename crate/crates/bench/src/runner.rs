//! Experiment runners. Every (setting, replication) pair is an independent
//! task with its own seed; tasks run on a worker pool and their records are
//! merged in (setting, replication, method) order.

use std::path::Path;
use std::time::Instant;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;
use sou_core::lasso::lasso_cv_fit;
use sou_core::linreg::{lr_fit, LinRegHyper};
use sou_core::logreg::{logreg_fit, one_vs_rest_train, predict_proba};
use sou_core::normal_means::{kappa_csv, kappa_posterior, nm_fit};
use sou_core::solver::ConvergenceReport;

use crate::config::{Experiment, ExperimentConfig, Method, Setting};
use crate::design::{
    simulate_linreg, simulate_logistic, simulate_normal_means, simulate_regression, simulate_t2_beta, SimOptions,
};
use crate::error::{BenchError, Result};
use crate::idx::load_mnist;
use crate::metrics::{
    aggregate, compute_metrics, prediction_rmse, AggregateRow, MetricsRecord, STATUS_CONVERGED, STATUS_FAILED,
    STATUS_MAX_ITERS,
};

/// Runs `f` on a pool of `threads` workers, or on the global pool when
/// `threads` is 0.
pub fn with_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if threads == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| BenchError::Config(format!("cannot start {threads} workers: {e}")))?;
    Ok(pool.install(f))
}

fn status(report: &ConvergenceReport) -> &'static str {
    if report.converged {
        STATUS_CONVERGED
    } else {
        STATUS_MAX_ITERS
    }
}

fn gamma_tau(cfg: &ExperimentConfig, method: Method) -> LinRegHyper {
    let mut h = cfg.hyper;
    if method == Method::Gl {
        h.base.gamma_tau = cfg.gl_gamma_tau;
    }
    h
}

fn blank_record(cfg: &ExperimentConfig, row: &Setting, method: Method, seed: u64) -> MetricsRecord {
    let (n, p, s, rho) = match *row {
        Setting::Design { n, p, s } => (n, p, Some(s), None),
        Setting::HeavyTail { rho, n, p } => (n, p, None, Some(rho)),
        Setting::Logistic { n, p, signals, .. } => (n, p, Some(signals), None),
        Setting::Means { coords, obs, signals, .. } => (obs, coords, Some(signals), None),
    };
    MetricsRecord {
        experiment: cfg.experiment.id().into(),
        n,
        p,
        s,
        rho,
        method: method.id().into(),
        seed,
        rmse: None,
        pred_rmse: None,
        prop_lt_1e1: None,
        prop_lt_1e2: None,
        prop_lt_1e3: None,
        test_accuracy: None,
        iterations: 0,
        converged: false,
        status: STATUS_FAILED.into(),
        error: None,
        runtime_ms: 0.0,
    }
}

fn fail(mut rec: MetricsRecord, e: impl std::fmt::Display) -> MetricsRecord {
    rec.status = STATUS_FAILED.into();
    rec.converged = false;
    rec.error = Some(e.to_string());
    rec
}

fn linear_task(cfg: &ExperimentConfig, row_index: usize, rep: usize) -> Vec<MetricsRecord> {
    let row = &cfg.rows[row_index];
    let seed = cfg.seed(row_index, rep);
    let opts = SimOptions { noise_sd: 1.0, n_test: cfg.n_test };
    let sim = match *row {
        Setting::Design { n, p, s } => simulate_linreg(n, p, s, cfg.block(), seed, &opts),
        Setting::HeavyTail { rho, n, p } => {
            simulate_t2_beta(p, rho, seed).and_then(|b| simulate_regression(b, n, seed, &opts))
        }
        _ => Err(BenchError::Config("not a regression setting".into())),
    };
    cfg.methods
        .iter()
        .map(|&method| {
            let rec = blank_record(cfg, row, method, seed);
            let sim = match &sim {
                Ok(sim) => sim,
                Err(e) => return fail(rec, e),
            };
            let start = Instant::now();
            let fitted: Result<(DVector<f64>, usize, &'static str)> = match method {
                Method::SouSgl | Method::Gl => lr_fit(&sim.data, &gamma_tau(cfg, method), &cfg.solver)
                    .map(|(s, r)| (s.m, r.iterations, status(&r)))
                    .map_err(Into::into),
                Method::Lasso => lasso_cv_fit(sim.data.x(), sim.data.y(), &cfg.lasso, seed)
                    .map(|f| (f.beta, 0, STATUS_CONVERGED))
                    .map_err(Into::into),
            };
            let mut rec =
                match fitted.and_then(|(beta, it, st)| compute_metrics(&beta, &sim.beta).map(|m| (beta, it, st, m))) {
                    Ok((beta, iterations, st, m)) => {
                        let mut rec =
                            MetricsRecord { iterations, converged: st == STATUS_CONVERGED, status: st.into(), ..rec };
                        rec.set_metrics(&m);
                        rec.pred_rmse = prediction_rmse(&sim.x_test, &sim.y_test, &beta, 0.0);
                        rec
                    }
                    Err(e) => fail(rec, e),
                };
            rec.runtime_ms = start.elapsed().as_secs_f64() * 1e3;
            rec
        })
        .collect()
}

fn logistic_task(cfg: &ExperimentConfig, row_index: usize, rep: usize) -> Vec<MetricsRecord> {
    let row = &cfg.rows[row_index];
    let seed = cfg.seed(row_index, rep);
    let sim = match *row {
        Setting::Logistic { n, p, signals, magnitude } => simulate_logistic(n, p, signals, magnitude, cfg.n_test, seed),
        _ => Err(BenchError::Config("not a classification setting".into())),
    };
    cfg.methods
        .iter()
        .map(|&method| {
            let rec = blank_record(cfg, row, method, seed);
            let sim = match &sim {
                Ok(sim) => sim,
                Err(e) => return fail(rec, e),
            };
            let start = Instant::now();
            let mut rec = match logreg_fit(&sim.data, &gamma_tau(cfg, method), &cfg.solver) {
                Ok((state, report)) => {
                    let st = status(&report);
                    let mut rec = MetricsRecord {
                        iterations: report.iterations,
                        converged: report.converged,
                        status: st.into(),
                        ..rec
                    };
                    match compute_metrics(&state.m, &sim.beta) {
                        Ok(m) => rec.set_metrics(&m),
                        Err(e) => return fail(rec, e),
                    }
                    if sim.x_test.nrows() > 0 {
                        match predict_proba(&state, &sim.x_test) {
                            Ok(pr) => {
                                let hits = pr
                                    .iter()
                                    .zip(sim.y_test.iter())
                                    .filter(|(q, &y)| (**q > 0.5) == (y == 1.0))
                                    .count();
                                rec.test_accuracy = Some(hits as f64 / pr.len() as f64);
                            }
                            Err(e) => return fail(rec, e),
                        }
                    }
                    rec
                }
                Err(e) => fail(rec, e),
            };
            rec.runtime_ms = start.elapsed().as_secs_f64() * 1e3;
            rec
        })
        .collect()
}

pub struct TableOutput {
    pub config: ExperimentConfig,
    pub records: Vec<MetricsRecord>,
    pub aggregates: Vec<AggregateRow>,
    pub failed: usize,
    pub wall_clock_s: f64,
}

/// The table1, tableS1, tableS2 and logistic-synth experiments.
pub fn run_table(cfg: &ExperimentConfig) -> Result<TableOutput> {
    cfg.validate()?;
    let task: fn(&ExperimentConfig, usize, usize) -> Vec<MetricsRecord> = match cfg.experiment {
        Experiment::Table1 | Experiment::TableS1 | Experiment::TableS2 => linear_task,
        Experiment::LogisticSynth => logistic_task,
        other => return Err(BenchError::Config(format!("{} is not a table experiment", other.id()))),
    };
    let start = Instant::now();
    let tasks: Vec<(usize, usize)> = (0..cfg.rows.len()).flat_map(|r| (0..cfg.reps).map(move |k| (r, k))).collect();
    let records: Vec<MetricsRecord> = with_pool(cfg.threads, || {
        tasks
            .par_iter()
            .flat_map_iter(|&(r, k)| task(cfg, r, k))
            .inspect(|rec| {
                if cfg.trace {
                    eprintln!(
                        "{} seed={} {} status={} iterations={}",
                        rec.experiment, rec.seed, rec.method, rec.status, rec.iterations
                    );
                }
            })
            .collect()
    })?;
    let failed = records.iter().filter(|r| r.failed()).count();
    Ok(TableOutput {
        config: cfg.clone(),
        aggregates: aggregate(&records),
        records,
        failed,
        wall_clock_s: start.elapsed().as_secs_f64(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Fig2Record {
    pub coords: usize,
    pub obs: usize,
    pub signals: usize,
    pub signal: f64,
    pub seed: u64,
    pub null_mean_kappa: Option<f64>,
    pub signal_mean_kappa: Option<f64>,
    /// Fraction of all κ samples in (0.2, 0.8).
    pub frac_mid: Option<f64>,
    pub null_max_abs_m: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub status: String,
    pub error: Option<String>,
    #[serde(skip)]
    pub runtime_ms: f64,
}

pub struct Fig2Output {
    pub config: ExperimentConfig,
    pub records: Vec<Fig2Record>,
    /// κ samples of the first replication of the first setting.
    pub kappa_csv: String,
    pub failed: usize,
    pub wall_clock_s: f64,
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, c) = v.fold((0.0, 0usize), |(s, c), x| (s + x, c + 1));
    (c > 0).then(|| s / c as f64)
}

fn fig2_task(cfg: &ExperimentConfig, row_index: usize, rep: usize) -> (Fig2Record, Option<String>) {
    let Setting::Means { coords, obs, signals, signal } = cfg.rows[row_index] else {
        unreachable!("validated setting")
    };
    let seed = cfg.seed(row_index, rep);
    let mut rec = Fig2Record {
        coords,
        obs,
        signals,
        signal,
        seed,
        null_mean_kappa: None,
        signal_mean_kappa: None,
        frac_mid: None,
        null_max_abs_m: None,
        iterations: 0,
        converged: false,
        status: STATUS_FAILED.into(),
        error: None,
        runtime_ms: 0.0,
    };
    let start = Instant::now();
    let run = || -> Result<(sou_core::normal_means::NMVariationalState, ConvergenceReport, Vec<Vec<f64>>)> {
        let data = simulate_normal_means(coords, obs, signals, signal, seed)?;
        let (state, report) = nm_fit(&data, &cfg.hyper.base, &cfg.solver)?;
        let kappa = kappa_posterior(&state, obs, cfg.kappa_samples, seed)?;
        Ok((state, report, kappa))
    };
    let mut csv = None;
    match run() {
        Ok((state, report, kappa)) => {
            let group_mean = |r: std::ops::Range<usize>| mean(r.map(|i| mean(kappa[i].iter().copied()).unwrap_or(0.0)));
            let total = kappa.iter().map(Vec::len).sum::<usize>() as f64;
            let mid = kappa.iter().flatten().filter(|&&k| k > 0.2 && k < 0.8).count() as f64;
            rec.signal_mean_kappa = group_mean(0..signals);
            rec.null_mean_kappa = group_mean(signals..coords);
            rec.frac_mid = Some(mid / total);
            rec.null_max_abs_m = state.m[signals..].iter().map(|m| m.abs()).reduce(f64::max);
            rec.iterations = report.iterations;
            rec.converged = report.converged;
            rec.status = status(&report).into();
            if row_index == 0 && rep == 0 {
                let is_signal: Vec<bool> = (0..coords).map(|i| i < signals).collect();
                csv = Some(kappa_csv(&kappa, &is_signal));
            }
        }
        Err(e) => rec.error = Some(e.to_string()),
    }
    rec.runtime_ms = start.elapsed().as_secs_f64() * 1e3;
    (rec, csv)
}

pub fn run_fig2(cfg: &ExperimentConfig) -> Result<Fig2Output> {
    cfg.validate()?;
    if cfg.experiment != Experiment::Fig2 {
        return Err(BenchError::Config(format!("{} is not the fig2 experiment", cfg.experiment.id())));
    }
    let start = Instant::now();
    let tasks: Vec<(usize, usize)> = (0..cfg.rows.len()).flat_map(|r| (0..cfg.reps).map(move |k| (r, k))).collect();
    let results: Vec<(Fig2Record, Option<String>)> =
        with_pool(cfg.threads, || tasks.par_iter().map(|&(r, k)| fig2_task(cfg, r, k)).collect())?;
    let kappa_csv = results.iter().find_map(|(_, c)| c.clone()).unwrap_or_default();
    let records: Vec<Fig2Record> = results.into_iter().map(|(r, _)| r).collect();
    let failed = records.iter().filter(|r| r.status == STATUS_FAILED).count();
    Ok(Fig2Output { config: cfg.clone(), records, kappa_csv, failed, wall_clock_s: start.elapsed().as_secs_f64() })
}

/// One-vs-rest classification on the first `mnist_train` training images,
/// scored on the test images. Proportions count every coefficient of every
/// class model.
pub fn run_mnist(cfg: &ExperimentConfig) -> Result<TableOutput> {
    cfg.validate()?;
    let dir = cfg.mnist_dir.as_deref().ok_or_else(|| BenchError::Config("mnist needs mnist_dir".into()))?;
    let start = Instant::now();
    let (train, test) = load_mnist(dir)?;
    let n = cfg.mnist_train.min(train.labels.len());
    let x = train.x.rows(0, n).into_owned();
    let labels = &train.labels[..n];
    let classes: Vec<usize> = (0..10).collect();
    let mut records = Vec::new();
    for &method in &cfg.methods {
        let t = Instant::now();
        let mut rec = MetricsRecord {
            n,
            p: x.ncols(),
            s: None,
            ..blank_record(cfg, &Setting::Design { n, p: x.ncols(), s: 0 }, method, cfg.base_seed)
        };
        match one_vs_rest_train(&x, labels, &classes, &gamma_tau(cfg, method), &cfg.solver, true)
            .and_then(|m| m.predict(&test.x).map(|pred| (m, pred)))
        {
            Ok((model, pred)) => {
                let hits = pred.iter().zip(&test.labels).filter(|(a, b)| a == b).count();
                rec.test_accuracy = Some(hits as f64 / pred.len() as f64);
                let all: Vec<f64> = model.states.iter().flat_map(|s| s.m.iter().map(|v| v.abs())).collect();
                let frac = |eps: f64| Some(all.iter().filter(|&&v| v < eps).count() as f64 / all.len() as f64);
                (rec.prop_lt_1e1, rec.prop_lt_1e2, rec.prop_lt_1e3) = (frac(1e-1), frac(1e-2), frac(1e-3));
                rec.iterations = model.reports.iter().map(|r| r.iterations).max().unwrap_or(0);
                rec.converged = model.reports.iter().all(|r| r.converged);
                rec.status = if rec.converged { STATUS_CONVERGED } else { STATUS_MAX_ITERS }.into();
            }
            Err(e) => rec = fail(rec, e),
        }
        rec.runtime_ms = t.elapsed().as_secs_f64() * 1e3;
        records.push(rec);
    }
    let failed = records.iter().filter(|r| r.failed()).count();
    Ok(TableOutput {
        config: cfg.clone(),
        aggregates: aggregate(&records),
        records,
        failed,
        wall_clock_s: start.elapsed().as_secs_f64(),
    })
}

pub fn csv_string<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| BenchError::Config(format!("csv buffer: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

#[derive(Serialize)]
struct TimingRow<'a> {
    method: &'a str,
    seed: u64,
    runtime_ms: f64,
}

#[derive(Serialize)]
struct Meta<'a> {
    tool: &'static str,
    version: &'static str,
    experiment: &'static str,
    config: &'a ExperimentConfig,
    records: usize,
    failed_fits: usize,
    wall_clock_s: f64,
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|e| BenchError::io(path, e))
}

fn prepare(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| BenchError::io(dir, e))
}

fn meta_json(config: &ExperimentConfig, records: usize, failed: usize, wall_clock_s: f64) -> Result<String> {
    let meta = Meta {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        experiment: config.experiment.id(),
        config,
        records,
        failed_fits: failed,
        wall_clock_s,
    };
    Ok(serde_json::to_string_pretty(&meta)?)
}

/// records.csv, aggregate.csv, timing.csv and meta.json. The two data
/// files depend only on the configuration; timings go to their own file.
pub fn write_table(out: &TableOutput, dir: &Path) -> Result<()> {
    prepare(dir)?;
    write(dir, "records.csv", &csv_string(&out.records)?)?;
    let mut agg = csv_string(&out.aggregates)?;
    agg.push_str(&format!("# failed fits excluded from means: {}\n", out.failed));
    write(dir, "aggregate.csv", &agg)?;
    let timing: Vec<TimingRow> =
        out.records.iter().map(|r| TimingRow { method: &r.method, seed: r.seed, runtime_ms: r.runtime_ms }).collect();
    write(dir, "timing.csv", &csv_string(&timing)?)?;
    write(dir, "meta.json", &meta_json(&out.config, out.records.len(), out.failed, out.wall_clock_s)?)
}

/// Per-setting means of the fig2 records over successful fits.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Fig2Summary {
    pub coords: usize,
    pub obs: usize,
    pub signals: usize,
    pub signal: f64,
    pub reps: usize,
    pub failed: usize,
    pub null_mean_kappa: Option<f64>,
    pub signal_mean_kappa: Option<f64>,
    pub frac_mid: Option<f64>,
}

pub fn fig2_summary(records: &[Fig2Record]) -> Vec<Fig2Summary> {
    let mut out: Vec<Fig2Summary> = Vec::new();
    for r in records {
        let same = |s: &Fig2Summary| {
            (s.coords, s.obs, s.signals, s.signal.to_bits()) == (r.coords, r.obs, r.signals, r.signal.to_bits())
        };
        if out.iter().any(same) {
            continue;
        }
        let group: Vec<&Fig2Record> = records
            .iter()
            .filter(|g| {
                (g.coords, g.obs, g.signals, g.signal.to_bits()) == (r.coords, r.obs, r.signals, r.signal.to_bits())
            })
            .collect();
        let ok: Vec<&&Fig2Record> = group.iter().filter(|g| g.status != STATUS_FAILED).collect();
        out.push(Fig2Summary {
            coords: r.coords,
            obs: r.obs,
            signals: r.signals,
            signal: r.signal,
            reps: ok.len(),
            failed: group.len() - ok.len(),
            null_mean_kappa: mean(ok.iter().filter_map(|g| g.null_mean_kappa)),
            signal_mean_kappa: mean(ok.iter().filter_map(|g| g.signal_mean_kappa)),
            frac_mid: mean(ok.iter().filter_map(|g| g.frac_mid)),
        });
    }
    out
}

pub fn write_fig2(out: &Fig2Output, dir: &Path) -> Result<()> {
    prepare(dir)?;
    write(dir, "records.csv", &csv_string(&out.records)?)?;
    let mut agg = csv_string(&fig2_summary(&out.records))?;
    agg.push_str(&format!("# failed fits excluded from means: {}\n", out.failed));
    write(dir, "aggregate.csv", &agg)?;
    write(dir, "kappa_samples.csv", &out.kappa_csv)?;
    let timing: Vec<TimingRow> =
        out.records.iter().map(|r| TimingRow { method: "sou-sgl", seed: r.seed, runtime_ms: r.runtime_ms }).collect();
    write(dir, "timing.csv", &csv_string(&timing)?)?;
    write(dir, "meta.json", &meta_json(&out.config, out.records.len(), out.failed, out.wall_clock_s)?)
}
