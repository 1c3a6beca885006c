use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mds_core::linalg::Matrix;
use mds_core::mds::{adapt, AdaptationResult, Optimizer};
use mds_harness::config::ExperimentConfig;
use mds_harness::error::{HarnessError, Result};
use mds_harness::fixtures::{fixture_dirs, GoldenFixture};
use mds_harness::pipeline::{
    obtain_model, obtain_pool, run_evaluation, run_pipeline, ModelBundle, RunOptions,
};
use mds_harness::pool_io::read_pool;
use mds_harness::summarize::{read_results, summarize, CellKey};
use serde::Serialize;

#[derive(Parser)]
#[command(
    name = "mds",
    version,
    about = "Minimum-distance summaries for amortized posterior inference"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML, or JSON with a .json extension).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config's master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    #[arg(long, global = true, default_value = "runs")]
    out_dir: PathBuf,
    /// Adapt every query, skipping the misspecification test.
    #[arg(long, global = true)]
    no_gate: bool,
    #[arg(long, global = true, value_enum)]
    optimizer: Option<OptimizerArg>,
    /// Ignore cached pool and model files.
    #[arg(long, global = true)]
    no_cache: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum OptimizerArg {
    Lbfgs,
    Sgd,
}

impl From<OptimizerArg> for Optimizer {
    fn from(o: OptimizerArg) -> Self {
        match o {
            OptimizerArg::Lbfgs => Optimizer::Lbfgs,
            OptimizerArg::Sgd => Optimizer::Sgd,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the training pool.
    Simulate,
    /// Train the decoder and posterior engine and calibrate τ.
    Train {
        /// Existing pool file; simulated from the config otherwise.
        #[arg(long)]
        pool: Option<PathBuf>,
    },
    /// Reset τ of a model bundle from its stored holdout statistics.
    Calibrate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        alpha: f64,
        /// Output bundle; overwrites `--model` when unset.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Adapt the summary of one observed dataset.
    Adapt {
        #[arg(long)]
        model: PathBuf,
        /// Numeric CSV with one observation per row.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a trained model over the config's grid.
    Evaluate {
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Full pipeline: simulate, train, calibrate, evaluate.
    Bench,
    /// Median and IQR per (task, method, ε, δ).
    Summarize {
        #[arg(required = true)]
        csv: Vec<PathBuf>,
        /// Write the aggregate CSV here as well as printing the table.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Regenerate golden fixtures and compare.
    Verify {
        #[arg(long)]
        fixtures: PathBuf,
    },
}

fn load_config(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => return Err(HarnessError::Config("--config is required".into())),
    };
    if let Some(s) = c.seed {
        cfg.master_seed = s;
    }
    if c.no_gate {
        cfg.gate = false;
    }
    if let Some(o) = c.optimizer {
        cfg.optimizer = o.into();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run_options(c: &Common) -> RunOptions {
    RunOptions {
        jobs: c.jobs,
        use_cache: !c.no_cache,
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))
}

fn read_data_csv(path: &Path) -> Result<Matrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| HarnessError::format(path, e))?;
    let mut values = Vec::new();
    let mut width = None;
    let mut rows = 0;
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| HarnessError::format(path, e))?;
        let parsed: std::result::Result<Vec<f64>, _> =
            record.iter().map(str::parse::<f64>).collect();
        let parsed = match parsed {
            Ok(v) => v,
            // a header line
            Err(_) if i == 0 => continue,
            Err(e) => return Err(HarnessError::format(path, format!("line {}: {}", i + 1, e))),
        };
        if *width.get_or_insert(parsed.len()) != parsed.len() {
            return Err(HarnessError::format(
                path,
                format!("line {} has {} columns", i + 1, parsed.len()),
            ));
        }
        values.extend(parsed);
        rows += 1;
    }
    Ok(Matrix::from_vec(rows, width.unwrap_or(0), values)?)
}

#[derive(Serialize)]
struct AdaptOutput {
    model_hash: String,
    #[serde(flatten)]
    result: AdaptationResult,
}

fn run(cli: Cli) -> Result<()> {
    let c = &cli.common;
    match cli.command {
        Command::Simulate => {
            let cfg = load_config(c)?;
            ensure_dir(&c.out_dir)?;
            let (_, pool, path) = obtain_pool(&cfg, &c.out_dir, run_options(c))?;
            println!("{} ({} datasets)", path.display(), pool.len());
        }
        Command::Train { pool } => {
            let cfg = load_config(c)?;
            ensure_dir(&c.out_dir)?;
            let (bundle, path) = match pool {
                Some(p) => {
                    let (task, pool) = read_pool(&p)?;
                    let bundle = mds_harness::pipeline::train_models(&cfg, &task, &pool)?;
                    let path = mds_harness::pipeline::model_path(&cfg, &c.out_dir);
                    bundle.save(&path)?;
                    (bundle, path)
                }
                None => {
                    let (b, path, _) = obtain_model(&cfg, &c.out_dir, run_options(c))?;
                    (b, path)
                }
            };
            println!("{} (tau = {:?})", path.display(), bundle.decoder.threshold);
        }
        Command::Calibrate { model, alpha, out } => {
            let mut bundle = ModelBundle::load(&model)?;
            let tau = bundle.recalibrate(alpha)?;
            let out = out.unwrap_or(model);
            bundle.save(&out)?;
            println!("{} (tau = {})", out.display(), tau);
        }
        Command::Adapt { model, data, out } => {
            let bundle = ModelBundle::load(&model)?;
            let obs = read_data_csv(&data)?;
            let mut opts = mds_core::mds::AdaptOptions::default();
            if let Some(cfg_path) = &c.config {
                opts = ExperimentConfig::load(cfg_path)?.adapt_options();
            }
            if c.no_gate {
                opts.gate = false;
            }
            if let Some(o) = c.optimizer {
                opts.optimizer = o.into();
            }
            let result = adapt(&bundle.decoder, &bundle.task, &obs, &opts)?;
            let output = AdaptOutput {
                model_hash: bundle.hash(),
                result,
            };
            let json = serde_json::to_string_pretty(&output).expect("result serializes");
            fs::write(&out, json + "\n").map_err(|e| HarnessError::io(&out, e))?;
            println!(
                "statistic {} tau {:?} flagged {}",
                output.result.statistic, output.result.threshold, output.result.flagged
            );
        }
        Command::Evaluate { model } => {
            let cfg = load_config(c)?;
            ensure_dir(&c.out_dir)?;
            let opts = run_options(c);
            let (bundle, path, pool) = match model {
                Some(p) => (ModelBundle::load(&p)?, p, None),
                None => obtain_model(&cfg, &c.out_dir, opts)?,
            };
            let m = run_evaluation(&cfg, &bundle, path, pool, &c.out_dir, opts)?;
            println!("{} ({} rows)", m.results_path.display(), m.rows);
        }
        Command::Bench => {
            let cfg = load_config(c)?;
            let m = run_pipeline(&cfg, &c.out_dir, run_options(c))?;
            println!("{} ({} rows)", m.results_path.display(), m.rows);
        }
        Command::Summarize { csv, out } => {
            let mut rows = Vec::new();
            for p in &csv {
                rows.extend(read_results(p)?);
            }
            let requested: Vec<CellKey> = match &c.config {
                Some(_) => {
                    let cfg = load_config(c)?;
                    let task = cfg.task.build(cfg.master_seed)?;
                    let mut keys = Vec::new();
                    for cell in &cfg.cells {
                        let spec = cell.spec(&task);
                        for m in &cfg.methods {
                            keys.push(CellKey {
                                task: task.name().into(),
                                method: m.name().into(),
                                eps: spec.eps(),
                                delta: spec.delta(),
                            });
                        }
                    }
                    keys
                }
                None => Vec::new(),
            };
            let summary = summarize(&rows, &requested);
            print!("{}", summary.to_table());
            if let Some(out) = out {
                fs::write(&out, summary.to_csv()).map_err(|e| HarnessError::io(&out, e))?;
            }
            if !summary.missing.is_empty() {
                return Err(HarnessError::Mismatch(format!(
                    "{} requested cells have no rows",
                    summary.missing.len()
                )));
            }
        }
        Command::Verify { fixtures } => {
            let mut failed = 0;
            for dir in fixture_dirs(&fixtures)? {
                let report = GoldenFixture::load(&dir)?.verify()?;
                println!("{}", report);
                if !report.passed() {
                    failed += 1;
                }
            }
            if failed > 0 {
                return Err(HarnessError::Mismatch(format!(
                    "{} fixtures diverged",
                    failed
                )));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e);
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
