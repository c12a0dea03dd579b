use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;
use sou_bench::config::{Experiment, ExperimentConfig};
use sou_bench::input::{read_design, read_means};
use sou_bench::runner::{fig2_summary, run_fig2, run_mnist, run_table, write_fig2, write_table};
use sou_bench::{selftest, BenchError, Result};
use sou_core::conjugate::{figure1_csv, figure1_sweep, NormalNormalProblem};
use sou_core::linreg::{lr_fit, LinRegHyper, RegressionData};
use sou_core::logreg::{logreg_fit, predict_proba, ClassificationData};
use sou_core::normal_means::{kappa, nm_fit, NMHyperParams, NormalMeansData};
use sou_core::solver::{ConvergenceReport, SolverConfig};

#[derive(Parser)]
#[command(name = "sou", version, about = "Sparse global-local variational fits and their benchmark harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON document; fields left out keep their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
    /// Keep per-sweep objective traces, or log each finished replication.
    #[arg(long)]
    trace: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Sparse linear regression on a CSV design.
    FitLinreg(FitArgs),
    /// Sparse logistic regression on a CSV design with a 0/1 response.
    FitLogreg(FitArgs),
    /// Normal means on a headerless CSV, one coordinate per line.
    FitMeans {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run a benchmark experiment.
    Bench {
        /// table1, tableS1, tableS2, fig2, logistic-synth or mnist.
        experiment: String,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        mnist_dir: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Exact-oracle checks of the grid solver, conjugate algebra and driver.
    OracleSelftest {
        #[arg(long, default_value_t = 20240601)]
        seed: u64,
    },
    /// Normal-normal posterior across prior scales and confidences.
    SweepFig1 {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    data: PathBuf,
    /// Name of the response column.
    #[arg(long, default_value = "y")]
    response: String,
    #[arg(long)]
    intercept: bool,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FitConfig {
    hyper: LinRegHyper,
    solver: SolverConfig,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
struct Fig1Config {
    base: NormalNormalProblem,
    sigma0_grid: Vec<f64>,
    gamma_grid: Vec<f64>,
}

impl Default for Fig1Config {
    fn default() -> Self {
        Fig1Config {
            base: NormalNormalProblem { mu0: 0.0, sigma0_sq: 1.0, sigma_sq: 1.0, ybar: 2.0, n: 5, gamma_mu: 1.0 },
            sigma0_grid: vec![0.1, 0.25, 0.5, 1.0, 2.0, 4.0],
            gamma_grid: vec![1e-3, 1e-2, 0.1, 1.0, 10.0, 100.0],
        }
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| BenchError::io(path, e))
}

fn load_json<T: for<'de> Deserialize<'de> + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        Some(p) => Ok(serde_json::from_str(&read_text(p)?)?),
        None => Ok(T::default()),
    }
}

/// Writes `file` under `--out` when given, otherwise prints it.
fn emit(out: Option<&Path>, file: &str, text: &str) -> Result<()> {
    match out {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| BenchError::io(dir, e))?;
            let path = dir.join(file);
            fs::write(&path, text).map_err(|e| BenchError::io(&path, e))?;
            eprintln!("wrote {}", path.display());
        }
        None => println!("{text}"),
    }
    Ok(())
}

fn report_json(r: &ConvergenceReport, trace: bool) -> serde_json::Value {
    let mut v = json!({
        "iterations": r.iterations,
        "converged": r.converged,
        "final_change": r.final_change,
        "objective": r.objective_trace.last(),
    });
    if trace {
        v["objective_trace"] = json!(r.objective_trace);
        v["change_trace"] = json!(r.change_trace);
    }
    v
}

fn fit_linreg(a: &FitArgs) -> Result<()> {
    let cfg: FitConfig = load_json(a.common.config.as_deref())?;
    let (x, y, names) = read_design(&a.data, &a.response)?;
    let data = RegressionData::new(x, y, a.intercept)?;
    let (s, r) = lr_fit(&data, &cfg.hyper, &cfg.solver)?;
    let sd: Vec<f64> = (0..s.m.len()).map(|j| s.s[(j, j)].sqrt()).collect();
    let out = json!({
        "features": names,
        "mean": s.m.as_slice(),
        "sd": sd,
        "intercept": if a.intercept { Some(s.m_alpha) } else { None },
        "noise_variance": s.b_sigma / (s.a_sigma - 1.0),
        "report": report_json(&r, a.common.trace),
    });
    emit(a.common.out.as_deref(), "fit.json", &serde_json::to_string_pretty(&out)?)
}

fn fit_logreg(a: &FitArgs) -> Result<()> {
    let cfg: FitConfig = load_json(a.common.config.as_deref())?;
    let (x, y, names) = read_design(&a.data, &a.response)?;
    let data = ClassificationData::new(x.clone(), y.clone(), a.intercept)?;
    let (s, r) = logreg_fit(&data, &cfg.hyper, &cfg.solver)?;
    let p = predict_proba(&s, &x)?;
    let hits = p.iter().zip(y.iter()).filter(|(p, y)| (**p > 0.5) == (**y > 0.5)).count();
    let out = json!({
        "features": names,
        "mean": s.m.as_slice(),
        "intercept": if a.intercept { Some(s.m_alpha) } else { None },
        "train_accuracy": hits as f64 / y.len() as f64,
        "report": report_json(&r, a.common.trace),
    });
    emit(a.common.out.as_deref(), "fit.json", &serde_json::to_string_pretty(&out)?)
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct MeansConfig {
    hyper: NMHyperParams,
    solver: SolverConfig,
}

fn fit_means(data: &Path, common: &Common) -> Result<()> {
    let cfg: MeansConfig = load_json(common.config.as_deref())?;
    let data = NormalMeansData::new(&read_means(data)?)?;
    let (s, r) = nm_fit(&data, &cfg.hyper, &cfg.solver)?;
    let nu2 = s.b_nu / (s.a_nu - 1.0);
    let sigma2 = s.b_sigma / (s.a_sigma - 1.0);
    let k: Vec<f64> = (0..data.rows()).map(|i| kappa(data.n(), s.b_tau[i] / (s.a_tau[i] - 1.0), nu2, sigma2)).collect();
    let out = json!({
        "mean": s.m,
        "variance": s.s2,
        "kappa_plug_in": k,
        "report": report_json(&r, common.trace),
    });
    emit(common.out.as_deref(), "fit.json", &serde_json::to_string_pretty(&out)?)
}

fn bench(id: &str, reps: Option<usize>, mnist_dir: Option<PathBuf>, common: &Common) -> Result<()> {
    let experiment = Experiment::parse(id)?;
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::from_json_over_preset(&read_text(p)?, experiment)?,
        None => ExperimentConfig::preset(experiment),
    };
    if cfg.experiment != experiment {
        return Err(BenchError::Config(format!(
            "config names experiment {} but {} was requested",
            cfg.experiment.id(),
            experiment.id()
        )));
    }
    if let Some(seed) = common.seed {
        cfg.base_seed = seed;
    }
    if let Some(r) = reps {
        cfg.reps = r;
    }
    if let Some(t) = common.threads {
        cfg.threads = t;
    }
    if common.out.is_some() {
        cfg.out = common.out.clone();
    }
    if mnist_dir.is_some() {
        cfg.mnist_dir = mnist_dir;
    }
    cfg.trace |= common.trace;
    let dir = cfg.out.clone().unwrap_or_else(|| PathBuf::from("out").join(experiment.id()));
    match experiment {
        Experiment::Fig2 => {
            let out = run_fig2(&cfg)?;
            write_fig2(&out, &dir)?;
            for s in fig2_summary(&out.records) {
                println!("{}", serde_json::to_string(&s)?);
            }
            eprintln!("{} failed fits, {:.1}s", out.failed, out.wall_clock_s);
        }
        Experiment::Mnist => {
            let out = run_mnist(&cfg)?;
            write_table(&out, &dir)?;
            print!("{}", sou_bench::runner::csv_string(&out.aggregates)?);
        }
        _ => {
            let out = run_table(&cfg)?;
            write_table(&out, &dir)?;
            print!("{}", sou_bench::runner::csv_string(&out.aggregates)?);
            eprintln!("{} failed fits, {:.1}s", out.failed, out.wall_clock_s);
        }
    }
    eprintln!("results in {}", dir.display());
    Ok(())
}

fn oracle_selftest(seed: u64) -> Result<bool> {
    let checks = selftest::run_all(seed);
    for c in &checks {
        println!("{}", c.line());
    }
    Ok(checks.iter().all(|c| c.passed))
}

fn sweep_fig1(common: &Common) -> Result<()> {
    let cfg: Fig1Config = load_json(common.config.as_deref())?;
    let rows = figure1_sweep(&cfg.base, &cfg.sigma0_grid, &cfg.gamma_grid)?;
    emit(common.out.as_deref(), "figure1.csv", figure1_csv(&rows).trim_end())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::FitLinreg(a) => fit_linreg(&a)?,
        Command::FitLogreg(a) => fit_logreg(&a)?,
        Command::FitMeans { data, common } => fit_means(&data, &common)?,
        Command::Bench { experiment, reps, mnist_dir, common } => bench(&experiment, reps, mnist_dir, &common)?,
        Command::OracleSelftest { seed } => return oracle_selftest(seed),
        Command::SweepFig1 { common } => sweep_fig1(&common)?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
