//! Experiment configuration: which study, which settings, how many
//! replications, which methods, and overrides for every tunable.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sou_core::lasso::LassoConfig;
use sou_core::linreg::LinRegHyper;
use sou_core::solver::SolverConfig;

use crate::design::{TABLE1_BLOCK, TABLE_S1_BLOCK};
use crate::error::{BenchError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    #[serde(rename = "table1")]
    Table1,
    #[serde(rename = "tableS1")]
    TableS1,
    #[serde(rename = "tableS2")]
    TableS2,
    Fig2,
    LogisticSynth,
    Mnist,
}

impl Experiment {
    pub fn id(self) -> &'static str {
        match self {
            Experiment::Table1 => "table1",
            Experiment::TableS1 => "tableS1",
            Experiment::TableS2 => "tableS2",
            Experiment::Fig2 => "fig2",
            Experiment::LogisticSynth => "logistic-synth",
            Experiment::Mnist => "mnist",
        }
    }

    pub fn parse(id: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(id.into()))
            .map_err(|_| BenchError::Config(format!("unknown experiment `{id}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "sou-sgl")]
    SouSgl,
    /// The same fitter with γ_τ = `gl_gamma_tau`.
    #[serde(rename = "gl")]
    Gl,
    #[serde(rename = "lasso")]
    Lasso,
}

impl Method {
    pub fn id(self) -> &'static str {
        match self {
            Method::SouSgl => "sou-sgl",
            Method::Gl => "gl",
            Method::Lasso => "lasso",
        }
    }
}

/// One row of a study. The variant must suit the experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Setting {
    Design {
        n: usize,
        p: usize,
        s: usize,
    },
    HeavyTail {
        rho: f64,
        #[serde(default = "heavy_n")]
        n: usize,
        #[serde(default = "heavy_p")]
        p: usize,
    },
    Means {
        coords: usize,
        obs: usize,
        signals: usize,
        signal: f64,
    },
    Logistic {
        n: usize,
        p: usize,
        signals: usize,
        magnitude: f64,
    },
}

fn heavy_n() -> usize {
    55
}

fn heavy_p() -> usize {
    50
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub rows: Vec<Setting>,
    pub reps: usize,
    pub base_seed: u64,
    pub methods: Vec<Method>,
    pub hyper: LinRegHyper,
    pub gl_gamma_tau: f64,
    pub solver: SolverConfig,
    pub lasso: LassoConfig,
    /// Non-zero coefficient block for the repeated-block designs. Empty
    /// means the experiment's own block.
    pub block: Vec<f64>,
    /// Held-out rows per replication for predictive metrics.
    pub n_test: usize,
    pub kappa_samples: usize,
    pub threads: usize,
    pub out: Option<PathBuf>,
    pub mnist_dir: Option<PathBuf>,
    pub mnist_train: usize,
    pub trace: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig::preset(Experiment::Table1)
    }
}

fn designs(rows: &[(usize, usize, usize)]) -> Vec<Setting> {
    rows.iter().map(|&(n, p, s)| Setting::Design { n, p, s }).collect()
}

impl ExperimentConfig {
    pub fn preset(experiment: Experiment) -> Self {
        let base = ExperimentConfig {
            experiment,
            rows: Vec::new(),
            reps: 100,
            base_seed: 0,
            methods: vec![Method::SouSgl, Method::Lasso],
            hyper: LinRegHyper::default(),
            gl_gamma_tau: 1.0,
            solver: SolverConfig { max_iters: 1000, ..Default::default() },
            lasso: LassoConfig::default(),
            block: Vec::new(),
            n_test: 1000,
            kappa_samples: 4000,
            threads: 0,
            out: None,
            mnist_dir: None,
            mnist_train: 5000,
            trace: false,
        };
        match experiment {
            Experiment::Table1 => ExperimentConfig {
                rows: designs(&[
                    (25, 20, 10),
                    (55, 50, 10),
                    (55, 50, 20),
                    (105, 100, 10),
                    (105, 100, 20),
                    (105, 100, 50),
                    (205, 200, 10),
                    (205, 200, 50),
                    (205, 200, 100),
                ]),
                ..base
            },
            Experiment::TableS1 => ExperimentConfig {
                rows: designs(&[
                    (24, 20, 10),
                    (60, 50, 10),
                    (60, 50, 20),
                    (120, 100, 10),
                    (120, 100, 20),
                    (120, 100, 50),
                    (240, 200, 10),
                    (240, 200, 50),
                    (240, 200, 100),
                ]),
                ..base
            },
            Experiment::TableS2 => ExperimentConfig {
                rows: [0.1, 0.2, 0.3, 0.4, 0.5].iter().map(|&rho| Setting::HeavyTail { rho, n: 55, p: 50 }).collect(),
                ..base
            },
            Experiment::Fig2 => ExperimentConfig {
                rows: vec![Setting::Means { coords: 100, obs: 5, signals: 20, signal: 10.0 }],
                reps: 10,
                methods: vec![Method::SouSgl],
                solver: SolverConfig::default(),
                ..base
            },
            Experiment::LogisticSynth => ExperimentConfig {
                rows: vec![Setting::Logistic { n: 200, p: 50, signals: 10, magnitude: 3.0 }],
                methods: vec![Method::SouSgl, Method::Gl],
                ..base
            },
            Experiment::Mnist => ExperimentConfig {
                rows: Vec::new(),
                reps: 1,
                methods: vec![Method::SouSgl, Method::Gl],
                solver: SolverConfig { max_iters: 100, ..Default::default() },
                ..base
            },
        }
    }

    /// The preset for the experiment named in `json` (or `fallback`), with
    /// every field present in `json` replacing the preset's.
    pub fn from_json_over_preset(json: &str, fallback: Experiment) -> Result<Self> {
        let overrides: serde_json::Value = serde_json::from_str(json)?;
        let serde_json::Value::Object(overrides) = overrides else {
            return Err(BenchError::Config("configuration must be a JSON object".into()));
        };
        let experiment = match overrides.get("experiment") {
            Some(v) => serde_json::from_value(v.clone())?,
            None => fallback,
        };
        if let Some(serde_json::Value::Array(rows)) = overrides.get("rows") {
            rows.iter().enumerate().try_for_each(|(i, r)| check_row_keys(i, r))?;
        }
        let mut merged = serde_json::to_value(ExperimentConfig::preset(experiment))?;
        merge(&mut merged, serde_json::Value::Object(overrides), "")?;
        let cfg: ExperimentConfig = serde_json::from_value(merged)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn block(&self) -> &[f64] {
        if !self.block.is_empty() {
            return &self.block;
        }
        match self.experiment {
            Experiment::TableS1 => &TABLE_S1_BLOCK,
            _ => &TABLE1_BLOCK,
        }
    }

    /// base seed + row·10⁶ + rep.
    pub fn seed(&self, row: usize, rep: usize) -> u64 {
        self.base_seed.wrapping_add(row as u64 * 1_000_000).wrapping_add(rep as u64)
    }

    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(BenchError::Config("reps must be at least 1".into()));
        }
        if self.reps > 1_000_000 {
            return Err(BenchError::Config("reps above 10⁶ would overlap the seeds of the next row".into()));
        }
        if self.methods.is_empty() {
            return Err(BenchError::Config("no methods selected".into()));
        }
        self.hyper.validate()?;
        self.solver.validate()?;
        self.lasso.validate()?;
        if !(self.gl_gamma_tau.is_finite() && self.gl_gamma_tau > 0.0) {
            return Err(BenchError::Config("gl_gamma_tau must be positive".into()));
        }
        let linear = matches!(self.experiment, Experiment::Table1 | Experiment::TableS1 | Experiment::TableS2);
        if !linear && self.methods.contains(&Method::Lasso) {
            return Err(BenchError::Config(format!("the lasso baseline does not apply to {}", self.experiment.id())));
        }
        if self.experiment == Experiment::Fig2 && self.methods != [Method::SouSgl] {
            return Err(BenchError::Config("fig2 fits the sou-sgl model only".into()));
        }
        if self.experiment == Experiment::Mnist && self.mnist_dir.is_none() {
            return Err(BenchError::Config("mnist needs mnist_dir".into()));
        }
        for row in &self.rows {
            let ok = match (self.experiment, row) {
                (Experiment::Table1 | Experiment::TableS1, Setting::Design { n, p, s }) => s <= p && *n > 0,
                (Experiment::TableS2, Setting::HeavyTail { rho, n, p }) => {
                    (0.0..=1.0).contains(rho) && *n > 0 && *p > 0
                }
                (Experiment::Fig2, Setting::Means { coords, obs, signals, signal }) => {
                    signals <= coords && *obs > 0 && signal.is_finite()
                }
                (Experiment::LogisticSynth, Setting::Logistic { n, p, signals, magnitude }) => {
                    signals <= p && *n > 0 && magnitude.is_finite()
                }
                _ => false,
            };
            if !ok {
                return Err(BenchError::Config(format!("setting {row:?} is not valid for {}", self.experiment.id())));
            }
        }
        Ok(())
    }
}

const ROW_KEYS: [&[&str]; 4] = [
    &["n", "p", "s"],
    &["rho", "n", "p"],
    &["coords", "obs", "signals", "signal"],
    &["n", "p", "signals", "magnitude"],
];

/// Keys of each row must all belong to one setting's key set.
fn check_row_keys(index: usize, row: &serde_json::Value) -> Result<()> {
    let serde_json::Value::Object(m) = row else {
        return Err(BenchError::Config(format!("rows[{index}] must be an object")));
    };
    if ROW_KEYS.iter().any(|keys| m.keys().all(|k| keys.contains(&k.as_str()))) {
        return Ok(());
    }
    let keys: Vec<&str> = m.keys().map(String::as_str).collect();
    Err(BenchError::Config(format!("rows[{index}] has keys {keys:?}, which match no setting")))
}

/// Replaces leaves of `target` by those of `over`, recursing into objects.
fn merge(target: &mut serde_json::Value, over: serde_json::Value, path: &str) -> Result<()> {
    match (target, over) {
        (serde_json::Value::Object(t), serde_json::Value::Object(o)) => {
            for (k, v) in o {
                let here = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                match t.get_mut(&k) {
                    Some(slot) => merge(slot, v, &here)?,
                    None => return Err(BenchError::Config(format!("unknown configuration field `{here}`"))),
                }
            }
            Ok(())
        }
        (slot, v) => {
            *slot = v;
            Ok(())
        }
    }
}
