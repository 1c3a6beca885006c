//! Golden fixtures: a config, the CSV it produced, and per-column relative
//! tolerances. A fixture directory holds `config.toml`, `expected.csv` and
//! `tolerances.toml`.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::pipeline::{evaluate, results_csv, simulate_pool, train_models};

/// Divergent cells listed in a report.
pub const REPORTED_MISMATCHES: usize = 10;

/// Columns compared as text.
const EXACT_COLUMNS: [&str; 6] = ["task", "method", "eps", "delta", "seed", "detected"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Relative tolerance for numeric columns not listed in `columns`.
    pub default_rel: f64,
    /// Differences below this are ignored whatever the magnitude.
    pub abs_floor: f64,
    pub columns: BTreeMap<String, f64>,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            default_rel: 1e-6,
            abs_floor: 1e-12,
            columns: BTreeMap::new(),
        }
    }
}

impl Tolerances {
    fn rel(&self, column: &str) -> f64 {
        self.columns
            .get(column)
            .copied()
            .unwrap_or(self.default_rel)
    }
}

#[derive(Clone, Debug)]
pub struct GoldenFixture {
    pub name: String,
    pub config: ExperimentConfig,
    pub expected_csv: String,
    pub tolerances: Tolerances,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellMismatch {
    /// 1-based data row; 0 for the header or a row count difference.
    pub row: usize,
    pub column: String,
    pub expected: String,
    pub actual: String,
}

impl fmt::Display for CellMismatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "row {} `{}`: expected {:?}, got {:?}",
            self.row, self.column, self.expected, self.actual
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FixtureReport {
    pub name: String,
    pub rows: usize,
    pub total_mismatches: usize,
    /// The first [`REPORTED_MISMATCHES`] divergent cells.
    pub mismatches: Vec<CellMismatch>,
}

impl FixtureReport {
    pub fn passed(&self) -> bool {
        self.total_mismatches == 0
    }
}

impl fmt::Display for FixtureReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.passed() {
            return write!(f, "{}: ok ({} rows)", self.name, self.rows);
        }
        writeln!(
            f,
            "{}: {} divergent cells",
            self.name, self.total_mismatches
        )?;
        for m in &self.mismatches {
            writeln!(f, "  {}", m)?;
        }
        Ok(())
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))
}

impl GoldenFixture {
    pub fn load(dir: &Path) -> Result<Self> {
        let config = ExperimentConfig::load(&dir.join("config.toml"))?;
        let tol_path = dir.join("tolerances.toml");
        let tolerances = toml::from_str(&read_text(&tol_path)?)
            .map_err(|e| HarnessError::format(&tol_path, e))?;
        Ok(GoldenFixture {
            name: dir
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| config.name.clone()),
            expected_csv: read_text(&dir.join("expected.csv"))?,
            config,
            tolerances,
        })
    }

    /// Regenerates the CSV in memory, single-threaded.
    pub fn regenerate(&self) -> Result<String> {
        regenerate_csv(&self.config)
    }

    pub fn verify(&self) -> Result<FixtureReport> {
        Ok(self.compare(&self.regenerate()?))
    }

    pub fn compare(&self, actual: &str) -> FixtureReport {
        compare_csv(&self.name, &self.expected_csv, actual, &self.tolerances)
    }
}

/// Results CSV of `cfg`, computed without touching the filesystem.
pub fn regenerate_csv(cfg: &ExperimentConfig) -> Result<String> {
    let run = || -> Result<String> {
        let task = cfg.task.build(cfg.master_seed)?;
        let pool = simulate_pool(cfg, &task)?;
        let bundle = train_models(cfg, &task, &pool)?;
        Ok(results_csv(&evaluate(cfg, &bundle)?))
    };
    match rayon::ThreadPoolBuilder::new().num_threads(1).build() {
        Ok(pool) => pool.install(run),
        Err(_) => run(),
    }
}

fn close(expected: &str, actual: &str, rel: f64, floor: f64) -> bool {
    if expected == actual {
        return true;
    }
    match (expected.parse::<f64>(), actual.parse::<f64>()) {
        (Ok(e), Ok(a)) => (e - a).abs() <= floor.max(rel * e.abs().max(a.abs())),
        _ => false,
    }
}

pub fn compare_csv(name: &str, expected: &str, actual: &str, tol: &Tolerances) -> FixtureReport {
    let mut all = Vec::new();
    let exp: Vec<&str> = expected.lines().collect();
    let act: Vec<&str> = actual.lines().collect();
    let header: Vec<&str> = exp
        .first()
        .map(|h| h.split(',').collect())
        .unwrap_or_default();
    if exp.first() != act.first() {
        all.push(CellMismatch {
            row: 0,
            column: "header".into(),
            expected: exp.first().unwrap_or(&"").to_string(),
            actual: act.first().unwrap_or(&"").to_string(),
        });
    }
    if exp.len() != act.len() {
        all.push(CellMismatch {
            row: 0,
            column: "row count".into(),
            expected: exp.len().saturating_sub(1).to_string(),
            actual: act.len().saturating_sub(1).to_string(),
        });
    }
    for (i, (e, a)) in exp.iter().zip(&act).enumerate().skip(1) {
        let ef: Vec<&str> = e.split(',').collect();
        let af: Vec<&str> = a.split(',').collect();
        for (j, column) in header.iter().enumerate() {
            let (ev, av) = (
                ef.get(j).copied().unwrap_or(""),
                af.get(j).copied().unwrap_or(""),
            );
            let ok = if EXACT_COLUMNS.contains(column) {
                ev == av
            } else {
                close(ev, av, tol.rel(column), tol.abs_floor)
            };
            if !ok {
                all.push(CellMismatch {
                    row: i,
                    column: column.to_string(),
                    expected: ev.into(),
                    actual: av.into(),
                });
            }
        }
    }
    FixtureReport {
        name: name.into(),
        rows: exp.len().saturating_sub(1),
        total_mismatches: all.len(),
        mismatches: all.into_iter().take(REPORTED_MISMATCHES).collect(),
    }
}

/// Every subdirectory of `dir` holding an `expected.csv`, sorted by name.
pub fn fixture_dirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| HarnessError::io(dir, e))? {
        let path = entry.map_err(|e| HarnessError::io(dir, e))?.path();
        if path.join("expected.csv").is_file() {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}
