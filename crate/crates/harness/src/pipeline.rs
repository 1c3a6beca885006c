//! simulate → feature map → decoder → calibration → engine → evaluation.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use mds_core::inference::{
    fit_bandwidth, train_decoder_from_embeddings, train_mdn, DecoderEmbedding,
    LinearGaussianPosterior, PosteriorEngine,
};
use mds_core::kernels::FeatureMap;
use mds_core::linalg::Matrix;
use mds_core::mds::{adapt_from, holdout_statistics, AdaptationResult};
use mds_core::metrics::{
    coverage, predictive_mmd, rmse, sample_mmd, summary_oracle_distance, ResultRow,
};
use mds_core::rng::{stream_rng, stream_seed};
use mds_core::simulators::{simulate_record, Task, TrainingPool};
use mds_core::stats::quantile;
use mds_core::train::TrainReport;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Method};
use crate::error::{HarnessError, Result, StageExt};
use crate::pool_io::{read_pool, write_pool};

/// Level of the reported credible intervals.
pub const CREDIBLE_ALPHA: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_validation_loss: Option<f64>,
}

impl From<&TrainReport> for TrainingSummary {
    fn from(r: &TrainReport) -> Self {
        TrainingSummary {
            epochs_run: r.epochs_run,
            best_epoch: r.best_epoch,
            best_validation_loss: r.best_validation_loss(),
        }
    }
}

/// Everything an adaptation or evaluation run needs, frozen after training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub training_hash: String,
    pub task: Task,
    pub alpha: f64,
    pub decoder: DecoderEmbedding,
    pub engine: PosteriorEngine,
    /// Null statistics of the held-out records, for recalibration.
    #[serde(with = "mds_core::serial::f64_vec")]
    pub holdout_statistics: Vec<f64>,
    pub decoder_training: TrainingSummary,
    pub engine_training: Option<TrainingSummary>,
}

impl ModelBundle {
    pub fn to_json(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("bundle serializes")
    }

    /// SHA-256 of the serialized bundle.
    pub fn hash(&self) -> String {
        crate::config::sha256_hex(&self.to_json())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| HarnessError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| HarnessError::io(path, e))?;
        serde_json::from_slice(&bytes).map_err(|e| HarnessError::format(path, e))
    }

    /// Resets τ to the (1 − α) quantile of the stored null statistics.
    pub fn recalibrate(&mut self, alpha: f64) -> Result<f64> {
        if !(alpha > 0.0 && alpha < 0.5) {
            return Err(HarnessError::Config(format!(
                "alpha must lie in (0, 0.5), got {}",
                alpha
            )));
        }
        let tau = quantile(&self.holdout_statistics, 1.0 - alpha);
        self.decoder.threshold = Some(tau);
        self.alpha = alpha;
        Ok(tau)
    }
}

fn with_threads<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> T {
    match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

pub fn simulate_pool(cfg: &ExperimentConfig, task: &Task) -> Result<TrainingPool> {
    let seed = cfg.master_seed;
    let records = (0..cfg.pool_size())
        .into_par_iter()
        .map(|i| {
            let mut r = simulate_record(task, seed, i)?;
            if !cfg.store_datasets {
                r.data = Matrix::zeros(0, 0);
            }
            Ok(r)
        })
        .collect::<mds_core::Result<Vec<_>>>()
        .stage("simulate", seed)?;
    TrainingPool::from_records(task, seed, records, cfg.store_datasets).stage("simulate", seed)
}

pub fn build_feature_map(
    cfg: &ExperimentConfig,
    task: &Task,
    pool: &TrainingPool,
) -> Result<FeatureMap> {
    let seed = cfg.master_seed;
    let mut rng = stream_rng(seed, "bandwidth", 0);
    let bw =
        fit_bandwidth(task, pool, cfg.bandwidth_datasets, &mut rng).stage("feature-map", seed)?;
    let mut rng = stream_rng(seed, "feature-map", 0);
    FeatureMap::build(task.row_dim(), cfg.feature_dim, bw, &mut rng).stage("feature-map", seed)
}

/// Mean embedding of every pool dataset, computed in parallel.
pub fn pool_embeddings(task: &Task, pool: &TrainingPool, fm: &FeatureMap) -> Result<Matrix> {
    let rows = (0..pool.len())
        .into_par_iter()
        .map(|i| {
            let data = pool.dataset(task, i)?;
            Ok(fm.mean_embedding(&data)?.values)
        })
        .collect::<mds_core::Result<Vec<_>>>()
        .stage("embed", pool.master_seed)?;
    Matrix::from_vec(pool.len(), fm.feature_dim(), rows.concat()).stage("embed", pool.master_seed)
}

/// Analytic posterior of the task, when one exists.
pub fn analytic_posterior(task: &Task) -> Option<LinearGaussianPosterior> {
    match task {
        Task::Gaussian(g) => Some(LinearGaussianPosterior::conjugate_gaussian(g.dim, g.n)),
        Task::Factor(f) => LinearGaussianPosterior::factor(f).ok(),
        _ => None,
    }
}

pub fn train_models(
    cfg: &ExperimentConfig,
    task: &Task,
    pool: &TrainingPool,
) -> Result<ModelBundle> {
    let seed = cfg.master_seed;
    let fm = build_feature_map(cfg, task, pool)?;
    let embeddings = pool_embeddings(task, pool, &fm)?;
    let mut rng = stream_rng(seed, "decoder", 0);
    let fit = train_decoder_from_embeddings(
        &pool.summaries,
        &embeddings,
        fm,
        cfg.holdout_frac,
        &cfg.decoder,
        &mut rng,
    )
    .stage("train-decoder", seed)?;
    let mut decoder = fit.decoder;
    let stats = holdout_statistics(&decoder, &fit.holdout).stage("calibrate", seed)?;
    decoder.threshold = Some(quantile(&stats, 1.0 - cfg.alpha));

    let (engine, engine_training) = if cfg.use_analytic() {
        let post = analytic_posterior(task).ok_or_else(|| {
            HarnessError::Config(format!("no analytic posterior for task {}", task.name()))
        })?;
        (PosteriorEngine::AnalyticGaussian(post), None)
    } else {
        let mut rng = stream_rng(seed, "npe", 0);
        let (e, report) = train_mdn(
            &pool.summaries,
            &pool.thetas,
            cfg.mdn_components,
            &cfg.mdn,
            &mut rng,
        )
        .stage("train-engine", seed)?;
        (e, Some(TrainingSummary::from(&report)))
    };
    Ok(ModelBundle {
        training_hash: cfg.training_hash(),
        task: task.clone(),
        alpha: cfg.alpha,
        decoder,
        engine,
        holdout_statistics: stats,
        decoder_training: TrainingSummary::from(&fit.report),
        engine_training,
    })
}

fn cell_key(cell: usize, index: usize) -> u64 {
    ((cell as u64) << 32) | index as u64
}

/// Clean test dataset `index`: θ* from the prior and data at θ*. Shared by
/// every grid cell.
pub fn test_dataset(
    task: &Task,
    master_seed: u64,
    index: usize,
) -> mds_core::Result<(Vec<f64>, Matrix)> {
    let mut rng = stream_rng(master_seed, "test-data", index as u64);
    let theta = task.sample_prior(&mut rng);
    let data = task.simulate(&theta, &mut rng)?;
    Ok((theta, data))
}

/// Result rows (one per method) for one grid cell and test dataset.
pub fn evaluate_one(
    cfg: &ExperimentConfig,
    bundle: &ModelBundle,
    cell: usize,
    index: usize,
) -> mds_core::Result<Vec<ResultRow>> {
    let task = &bundle.task;
    let seed = cfg.master_seed;
    let key = cell_key(cell, index);
    let c = &cfg.cells[cell];
    let (theta, clean) = test_dataset(task, seed, index)?;
    let s_oracle = task.summary(&clean)?;
    let observed = c
        .spec(task)
        .apply(task, &clean, &mut stream_rng(seed, "contam", key))?
        .data;
    let s_obs = task.summary(&observed)?;
    let obs_embedding = bundle.decoder.feature_map.mean_embedding(&observed)?;

    let reference = match analytic_posterior(task) {
        Some(p) => Some(PosteriorEngine::AnalyticGaussian(p).sample(
            &s_oracle,
            cfg.n_posterior_samples,
            &mut stream_rng(seed, "reference", key),
        )?),
        None => None,
    };

    let started = Instant::now();
    let adapted: AdaptationResult = adapt_from(
        &bundle.decoder,
        &s_obs,
        &obs_embedding,
        &cfg.adapt_options(),
    )?;
    let adapt_ms = started.elapsed().as_millis() as u64;

    let mut rows = Vec::with_capacity(cfg.methods.len());
    for &method in &cfg.methods {
        let started = Instant::now();
        let s_used = match method {
            Method::NpePlain => &s_obs,
            Method::NpeMds => &adapted.s_star,
        };
        let samples = bundle.engine.sample(
            s_used,
            cfg.n_posterior_samples,
            &mut stream_rng(seed, "posterior", key),
        )?;
        let posterior_mmd = match &reference {
            Some(r) => Some(sample_mmd(&samples, r)?),
            None => None,
        };
        let pred = predictive_mmd(
            task,
            &samples,
            &clean,
            cfg.n_predictive(),
            &mut stream_rng(seed, "predictive", key),
        )?;
        let mut elapsed = started.elapsed().as_millis() as u64;
        if method == Method::NpeMds {
            elapsed += adapt_ms;
        }
        rows.push(ResultRow {
            task: task.name().into(),
            method: method.name().into(),
            eps: c.spec(task).eps(),
            delta: c.spec(task).delta(),
            seed: stream_seed(seed, "test-data", index as u64),
            rmse: rmse(&samples, &theta)?,
            coverage: coverage(&samples, &theta, CREDIBLE_ALPHA)?,
            posterior_mmd,
            predictive_mmd: pred,
            summary_oracle_dist: summary_oracle_distance(s_used, &s_oracle)?,
            detected: adapted.flagged,
            wall_time_ms: if cfg.record_timing { elapsed } else { 0 },
        });
    }
    Ok(rows)
}

/// All grid cells × test datasets, in (cell, dataset, method) order.
pub fn evaluate(cfg: &ExperimentConfig, bundle: &ModelBundle) -> Result<Vec<ResultRow>> {
    let jobs: Vec<(usize, usize)> = (0..cfg.cells.len())
        .flat_map(|c| (0..cfg.n_test_datasets).map(move |i| (c, i)))
        .collect();
    let per_job = jobs
        .par_iter()
        .map(|&(c, i)| evaluate_one(cfg, bundle, c, i))
        .collect::<mds_core::Result<Vec<_>>>()
        .stage("evaluate", cfg.master_seed)?;
    Ok(per_job.into_iter().flatten().collect())
}

pub fn results_csv(rows: &[ResultRow]) -> String {
    let mut out = String::from(ResultRow::CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.to_csv_line());
        out.push('\n');
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub name: String,
    pub config_hash: String,
    pub training_hash: String,
    pub library_version: String,
    pub pool_path: Option<PathBuf>,
    pub model_path: PathBuf,
    pub results_path: PathBuf,
    pub model_hash: String,
    pub rows: usize,
    pub complete: bool,
    pub started_unix: u64,
    pub finished_unix: Option<u64>,
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| HarnessError::io(path, e))?;
    serde_json::to_writer_pretty(&mut f, value).expect("manifest serializes");
    f.write_all(b"\n").map_err(|e| HarnessError::io(path, e))
}

#[derive(Clone, Copy, Debug)]
pub struct RunOptions {
    /// Worker threads; 0 picks the number of cores.
    pub jobs: usize,
    /// Reuse pool and model files from earlier runs with the same hashes.
    pub use_cache: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            jobs: 0,
            use_cache: true,
        }
    }
}

pub fn pool_path(cfg: &ExperimentConfig, out_dir: &Path) -> PathBuf {
    out_dir.join(format!("pool-{}.bin", &cfg.pool_hash()[..16]))
}

pub fn model_path(cfg: &ExperimentConfig, out_dir: &Path) -> PathBuf {
    out_dir.join(format!("model-{}.json", &cfg.training_hash()[..16]))
}

/// Pool from cache or fresh simulation (written to `out_dir`).
pub fn obtain_pool(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    opts: RunOptions,
) -> Result<(Task, TrainingPool, PathBuf)> {
    let path = pool_path(cfg, out_dir);
    if opts.use_cache && path.exists() {
        let (task, pool) = read_pool(&path)?;
        return Ok((task, pool, path));
    }
    let task = cfg.task.build(cfg.master_seed)?;
    let pool = with_threads(opts.jobs, || simulate_pool(cfg, &task))?;
    write_pool(&path, &task, &pool)?;
    Ok((task, pool, path))
}

/// Model bundle from cache or fresh training (written to `out_dir`).
pub fn obtain_model(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    opts: RunOptions,
) -> Result<(ModelBundle, PathBuf, Option<PathBuf>)> {
    let path = model_path(cfg, out_dir);
    if opts.use_cache && path.exists() {
        let bundle = ModelBundle::load(&path)?;
        if bundle.training_hash == cfg.training_hash() {
            return Ok((bundle, path, None));
        }
    }
    let (task, pool, pool_file) = obtain_pool(cfg, out_dir, opts)?;
    let bundle = with_threads(opts.jobs, || train_models(cfg, &task, &pool))?;
    bundle.save(&path)?;
    Ok((bundle, path, Some(pool_file)))
}

/// Evaluates `bundle` over the grid and writes `results.csv` and
/// `manifest.json` into `out_dir`.
pub fn run_evaluation(
    cfg: &ExperimentConfig,
    bundle: &ModelBundle,
    model_path: PathBuf,
    pool_path: Option<PathBuf>,
    out_dir: &Path,
    opts: RunOptions,
) -> Result<RunManifest> {
    let results_path = out_dir.join("results.csv");
    let manifest_path = out_dir.join("manifest.json");
    let mut manifest = RunManifest {
        name: cfg.name.clone(),
        config_hash: cfg.hash(),
        training_hash: cfg.training_hash(),
        library_version: env!("CARGO_PKG_VERSION").into(),
        pool_path,
        model_path,
        results_path: results_path.clone(),
        model_hash: bundle.hash(),
        rows: 0,
        complete: false,
        started_unix: unix_now(),
        finished_unix: None,
    };
    write_json(&manifest_path, &manifest)?;
    let rows = with_threads(opts.jobs, || evaluate(cfg, bundle))?;
    if bundle.hash() != manifest.model_hash {
        return Err(HarnessError::Core(mds_core::Error::InvalidState(
            "model bundle changed during evaluation".into(),
        )));
    }
    fs::write(&results_path, results_csv(&rows)).map_err(|e| HarnessError::io(&results_path, e))?;
    manifest.rows = rows.len();
    manifest.complete = true;
    manifest.finished_unix = Some(unix_now());
    write_json(&manifest_path, &manifest)?;
    Ok(manifest)
}

/// The whole pipeline; cached pool and model files are reused when their
/// hashes match.
pub fn run_pipeline(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    opts: RunOptions,
) -> Result<RunManifest> {
    fs::create_dir_all(out_dir).map_err(|e| HarnessError::io(out_dir, e))?;
    let (bundle, model_path, pool_path) = obtain_model(cfg, out_dir, opts)?;
    run_evaluation(cfg, &bundle, model_path, pool_path, out_dir, opts)
}
