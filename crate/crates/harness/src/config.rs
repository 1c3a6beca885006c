//! Experiment configuration. Every field has a default, so a minimal file
//! only names the task:
//!
//! ```toml
//! [task]
//! kind = "gaussian"
//! ```

use std::path::Path;

use mds_core::contamination::ContaminationSpec;
use mds_core::mds::{AdaptOptions, Optimizer};
use mds_core::optimize::OptimOptions;
use mds_core::rng::rng_from_seed;
use mds_core::rng::stream_seed;
use mds_core::simulators::{FactorTask, GaussianTask, OupTask, SirTask, Task};
use mds_core::train::TrainOptions;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{HarnessError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Gaussian,
    Factor,
    Oup,
    Sir,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskConfig {
    pub kind: TaskKind,
    /// θ and data dimension of the Gaussian task.
    pub dim: usize,
    /// Observed dimension D of the factor model.
    pub observed_dim: usize,
    /// Observations (or trajectories) per dataset.
    pub n: usize,
    /// Euler step for the time series tasks; the task default when unset.
    pub dt: Option<f64>,
}

impl Default for TaskConfig {
    fn default() -> Self {
        TaskConfig {
            kind: TaskKind::Gaussian,
            dim: 2,
            observed_dim: 10,
            n: 100,
            dt: None,
        }
    }
}

impl TaskConfig {
    /// The factor projection is drawn from its own stream of `master_seed`.
    pub fn build(&self, master_seed: u64) -> Result<Task> {
        let task = match self.kind {
            TaskKind::Gaussian => Task::Gaussian(GaussianTask::new(self.dim, self.n)?),
            TaskKind::Factor => {
                let mut rng = rng_from_seed(stream_seed(master_seed, "factor-projection", 0));
                Task::Factor(FactorTask::new(self.observed_dim, self.n, &mut rng)?)
            }
            TaskKind::Oup => {
                let d = OupTask::default();
                Task::Oup(OupTask {
                    n: self.n,
                    dt: self.dt.unwrap_or(d.dt),
                    ..d
                })
            }
            TaskKind::Sir => {
                let d = SirTask::default();
                Task::Sir(SirTask {
                    n: self.n,
                    dt: self.dt.unwrap_or(d.dt),
                    ..d
                })
            }
        };
        Ok(task)
    }

    pub fn default_pool_size(&self) -> usize {
        match self.kind {
            TaskKind::Gaussian | TaskKind::Factor => 50_000,
            TaskKind::Oup | TaskKind::Sir => 10_000,
        }
    }
}

/// One contamination setting of the evaluation grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Cell {
    pub eps: f64,
    pub delta: f64,
    /// Explicit contamination model; the task's default kind when unset.
    pub contamination: Option<ContaminationSpec>,
}

impl Default for Cell {
    fn default() -> Self {
        Cell {
            eps: 0.2,
            delta: 3.0,
            contamination: None,
        }
    }
}

impl Cell {
    pub fn spec(&self, task: &Task) -> ContaminationSpec {
        self.contamination
            .clone()
            .unwrap_or_else(|| ContaminationSpec::for_task(task, self.eps, self.delta))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Query the posterior at the observed summary.
    NpePlain,
    /// Query at the minimum distance summary.
    NpeMds,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::NpePlain => "npe_plain",
            Method::NpeMds => "npe_mds",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EngineKind {
    /// Analytic posterior where one exists, otherwise an MDN.
    Auto,
    Analytic,
    Mdn,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub task: TaskConfig,
    /// Training pool size M; the task default when unset.
    pub pool_size: Option<usize>,
    /// RFF dimension K.
    pub feature_dim: usize,
    /// Pool datasets pooled for the median-heuristic bandwidth.
    pub bandwidth_datasets: usize,
    pub holdout_frac: f64,
    pub alpha: f64,
    pub decoder: TrainOptions,
    pub engine: EngineKind,
    pub mdn_components: usize,
    pub mdn: TrainOptions,
    pub cells: Vec<Cell>,
    pub methods: Vec<Method>,
    pub n_test_datasets: usize,
    pub n_posterior_samples: usize,
    /// Posterior-predictive replicates; N when unset.
    pub n_predictive: Option<usize>,
    pub master_seed: u64,
    pub optimizer: Optimizer,
    pub gate: bool,
    pub optim: OptimOptions,
    /// Fill `wall_time_ms`; off by default so results stay byte-identical.
    pub record_timing: bool,
    /// Keep simulated datasets in the pool file (otherwise regenerated from
    /// the seed when needed).
    pub store_datasets: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: "experiment".into(),
            task: TaskConfig::default(),
            pool_size: None,
            feature_dim: 512,
            bandwidth_datasets: 100,
            holdout_frac: 0.05,
            alpha: 0.05,
            decoder: TrainOptions::default(),
            engine: EngineKind::Auto,
            mdn_components: 5,
            mdn: mds_core::inference::mdn_train_options(),
            cells: vec![Cell::default()],
            methods: vec![Method::NpePlain, Method::NpeMds],
            n_test_datasets: 100,
            n_posterior_samples: 1000,
            n_predictive: None,
            master_seed: 0,
            optimizer: Optimizer::Lbfgs,
            gate: true,
            optim: OptimOptions::default(),
            record_timing: false,
            store_datasets: false,
        }
    }
}

/// Config fields that determine the trained models.
#[derive(Serialize)]
struct TrainingKey<'a> {
    task: &'a TaskConfig,
    pool_size: usize,
    feature_dim: usize,
    bandwidth_datasets: usize,
    holdout_frac: f64,
    alpha: f64,
    decoder: &'a TrainOptions,
    engine: EngineKind,
    mdn_components: usize,
    mdn: &'a TrainOptions,
    master_seed: u64,
}

#[derive(Serialize)]
struct PoolKey<'a> {
    task: &'a TaskConfig,
    pool_size: usize,
    master_seed: u64,
    store_datasets: bool,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn json_hash<T: Serialize>(value: &T) -> String {
    sha256_hex(&serde_json::to_vec(value).expect("config serializes"))
}

impl ExperimentConfig {
    pub fn from_str_with_format(text: &str, json: bool) -> Result<Self> {
        let cfg: ExperimentConfig = if json {
            serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?
        } else {
            toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads TOML, or JSON when the file ends in `.json`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("{}: {}", path.display(), e)))?;
        let json = path.extension().is_some_and(|e| e == "json");
        Self::from_str_with_format(&text, json).map_err(|e| match e {
            HarnessError::Config(msg) => {
                HarnessError::Config(format!("{}: {}", path.display(), msg))
            }
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(HarnessError::Config(msg));
        if self.cells.is_empty() {
            return bad("the contamination grid `cells` is empty".into());
        }
        if self.methods.is_empty() {
            return bad("no methods selected".into());
        }
        if self.n_test_datasets == 0 {
            return bad("n_test_datasets must be positive".into());
        }
        if self.n_posterior_samples < 10 {
            return bad("n_posterior_samples must be at least 10".into());
        }
        if !(self.alpha > 0.0 && self.alpha < 0.5) {
            return bad(format!("alpha must lie in (0, 0.5), got {}", self.alpha));
        }
        if !(self.holdout_frac > 0.0 && self.holdout_frac <= 0.5) {
            return bad(format!(
                "holdout_frac must lie in (0, 0.5], got {}",
                self.holdout_frac
            ));
        }
        if self.feature_dim == 0 || self.mdn_components == 0 {
            return bad("feature_dim and mdn_components must be positive".into());
        }
        if self.task.n == 0 {
            return bad("task.n must be positive".into());
        }
        for c in &self.cells {
            if !(0.0..=1.0).contains(&c.eps) || c.delta < 0.0 {
                return bad(format!("invalid cell eps={} delta={}", c.eps, c.delta));
            }
        }
        if self.engine == EngineKind::Analytic
            && matches!(self.task.kind, TaskKind::Oup | TaskKind::Sir)
        {
            return bad("no analytic posterior exists for this task".into());
        }
        self.decoder
            .validate()
            .map_err(|e| HarnessError::Config(format!("decoder: {}", e)))?;
        self.mdn
            .validate()
            .map_err(|e| HarnessError::Config(format!("mdn: {}", e)))?;
        self.optim
            .validate()
            .map_err(|e| HarnessError::Config(format!("optim: {}", e)))?;
        Ok(())
    }

    pub fn pool_size(&self) -> usize {
        self.pool_size
            .unwrap_or_else(|| self.task.default_pool_size())
    }

    pub fn n_predictive(&self) -> usize {
        self.n_predictive.unwrap_or(self.task.n)
    }

    pub fn use_analytic(&self) -> bool {
        match self.engine {
            EngineKind::Analytic => true,
            EngineKind::Mdn => false,
            EngineKind::Auto => matches!(self.task.kind, TaskKind::Gaussian | TaskKind::Factor),
        }
    }

    pub fn adapt_options(&self) -> AdaptOptions {
        AdaptOptions {
            optimizer: self.optimizer,
            gate: self.gate,
            optim: self.optim.clone(),
        }
    }

    /// Content hash of the whole config.
    pub fn hash(&self) -> String {
        json_hash(self)
    }

    /// Hash of the fields that determine the trained models.
    pub fn training_hash(&self) -> String {
        json_hash(&TrainingKey {
            task: &self.task,
            pool_size: self.pool_size(),
            feature_dim: self.feature_dim,
            bandwidth_datasets: self.bandwidth_datasets,
            holdout_frac: self.holdout_frac,
            alpha: self.alpha,
            decoder: &self.decoder,
            engine: self.engine,
            mdn_components: self.mdn_components,
            mdn: &self.mdn,
            master_seed: self.master_seed,
        })
    }

    pub fn pool_hash(&self) -> String {
        json_hash(&PoolKey {
            task: &self.task,
            pool_size: self.pool_size(),
            master_seed: self.master_seed,
            store_datasets: self.store_datasets,
        })
    }
}
