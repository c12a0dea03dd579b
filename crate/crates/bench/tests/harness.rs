use std::fs;

use sou_bench::config::{Experiment, ExperimentConfig, Method, Setting};
use sou_bench::metrics::{aggregate, MetricsRecord, STATUS_CONVERGED, STATUS_FAILED};
use sou_bench::runner::{run_fig2, run_table, write_fig2, write_table};

fn small_table() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::preset(Experiment::Table1);
    cfg.rows = vec![Setting::Design { n: 25, p: 20, s: 10 }, Setting::Design { n: 40, p: 10, s: 5 }];
    cfg.reps = 3;
    cfg.methods = vec![Method::SouSgl, Method::Lasso];
    cfg.n_test = 50;
    cfg.lasso.n_lambda = 20;
    cfg
}

#[test]
fn table_outputs_are_byte_identical_across_runs_and_thread_counts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = small_table();
    write_table(&run_table(&cfg).unwrap(), a.path()).unwrap();
    let mut two = cfg.clone();
    two.threads = 2;
    write_table(&run_table(&two).unwrap(), b.path()).unwrap();
    for f in ["records.csv", "aggregate.csv"] {
        let x = fs::read(a.path().join(f)).unwrap();
        let y = fs::read(b.path().join(f)).unwrap();
        assert!(!x.is_empty());
        assert_eq!(x, y, "{f} differs");
    }
    for f in ["timing.csv", "meta.json"] {
        assert!(a.path().join(f).exists());
    }
    let meta: serde_json::Value = serde_json::from_slice(&fs::read(a.path().join("meta.json")).unwrap()).unwrap();
    assert_eq!(meta["experiment"], "table1");
    assert_eq!(meta["records"], 12);
}

#[test]
fn records_follow_seed_scheme_and_aggregate_matches() {
    let cfg = small_table();
    let out = run_table(&cfg).unwrap();
    assert_eq!(out.records.len(), 2 * 3 * 2);
    let seeds: Vec<u64> = out.records.iter().step_by(2).map(|r| r.seed).collect();
    let base = cfg.base_seed;
    assert_eq!(seeds, [base, base + 1, base + 2, base + 1_000_000, base + 1_000_001, base + 1_000_002]);
    assert_eq!(out.aggregates.len(), 4);
    for agg in &out.aggregates {
        let rows: Vec<&MetricsRecord> =
            out.records.iter().filter(|r| r.n == agg.n && r.method == agg.method && !r.failed()).collect();
        let mean = rows.iter().map(|r| r.rmse.unwrap()).sum::<f64>() / rows.len() as f64;
        assert!((agg.rmse.unwrap() - mean).abs() < 1e-12);
        assert_eq!(agg.reps, 3);
    }
    for r in &out.records {
        assert!(r.pred_rmse.is_some() && r.rmse.is_some());
        if r.method == "lasso" {
            assert_eq!(r.status, STATUS_CONVERGED);
        }
    }
}

#[test]
fn settings_use_independent_seeds() {
    let mut cfg = small_table();
    cfg.rows = vec![Setting::Design { n: 25, p: 20, s: 10 }, Setting::Design { n: 25, p: 20, s: 10 }];
    cfg.reps = 1;
    let out = run_table(&cfg).unwrap();
    assert_ne!(out.records[0].seed, out.records[2].seed);
    assert_ne!(out.records[0].rmse, out.records[2].rmse);
}

fn record(method: &str, rmse: Option<f64>, status: &str) -> MetricsRecord {
    MetricsRecord {
        experiment: "table1".into(),
        n: 10,
        p: 5,
        s: Some(2),
        rho: None,
        method: method.into(),
        seed: 0,
        rmse,
        pred_rmse: rmse,
        prop_lt_1e1: rmse.map(|_| 0.5),
        prop_lt_1e2: None,
        prop_lt_1e3: None,
        test_accuracy: None,
        iterations: 3,
        converged: status == STATUS_CONVERGED,
        status: status.into(),
        error: (status == STATUS_FAILED).then(|| "boom".into()),
        runtime_ms: 0.0,
    }
}

#[test]
fn failed_fits_are_counted_and_excluded() {
    let recs = vec![
        record("gl", Some(1.0), STATUS_CONVERGED),
        record("gl", None, STATUS_FAILED),
        record("gl", Some(3.0), "max_iters"),
    ];
    let agg = aggregate(&recs);
    assert_eq!(agg.len(), 1);
    assert_eq!((agg[0].reps, agg[0].failed, agg[0].converged), (2, 1, 1));
    assert_eq!(agg[0].rmse, Some(2.0));
    assert_eq!(agg[0].prop_lt_1e2, None);
}

#[test]
fn unknown_config_fields_are_rejected_with_their_path() {
    let e = ExperimentConfig::from_json_over_preset(r#"{"solver": {"max_iter": 5}}"#, Experiment::Table1).unwrap_err();
    assert!(e.to_string().contains("solver.max_iter"), "{e}");
    let e = ExperimentConfig::from_json_over_preset(r#"{"rows": [{"n": 5, "p": 4, "z": 1}]}"#, Experiment::Table1)
        .unwrap_err();
    assert!(e.to_string().contains("rows[0]"), "{e}");
    let ok =
        ExperimentConfig::from_json_over_preset(r#"{"reps": 7, "rows": [{"rho": 0.2}]}"#, Experiment::TableS2).unwrap();
    assert_eq!(ok.reps, 7);
    assert_eq!(ok.rows, [Setting::HeavyTail { rho: 0.2, n: 55, p: 50 }]);
}

#[test]
fn lasso_is_refused_outside_linear_tables() {
    let mut cfg = ExperimentConfig::preset(Experiment::LogisticSynth);
    cfg.methods.push(Method::Lasso);
    assert!(run_table(&cfg).is_err());
}

#[test]
fn logistic_synth_reports_accuracy() {
    let mut cfg = ExperimentConfig::preset(Experiment::LogisticSynth);
    cfg.reps = 1;
    cfg.n_test = 200;
    let out = run_table(&cfg).unwrap();
    assert_eq!(out.records.len(), 2);
    for r in &out.records {
        let acc = r.test_accuracy.expect("accuracy");
        assert!(acc > 0.7, "{} accuracy {acc}", r.method);
    }
}

#[test]
fn fig2_writes_kappa_samples() {
    let mut cfg = ExperimentConfig::preset(Experiment::Fig2);
    cfg.reps = 1;
    cfg.kappa_samples = 50;
    let out = run_fig2(&cfg).unwrap();
    assert_eq!(out.failed, 0);
    let dir = tempfile::tempdir().unwrap();
    write_fig2(&out, dir.path()).unwrap();
    let kappa = fs::read_to_string(dir.path().join("kappa_samples.csv")).unwrap();
    assert!(kappa.lines().count() > 100);
    assert!(dir.path().join("records.csv").exists());
}
