//! Median and interquartile range of each metric per (task, method, ε, δ).

use std::cmp::Ordering;
use std::fmt::Write as _;
use std::path::Path;

use mds_core::metrics::ResultRow;
use mds_core::stats::quantile;

use crate::error::{HarnessError, Result};

pub const METRICS: [&str; 6] = [
    "rmse",
    "coverage",
    "posterior_mmd",
    "predictive_mmd",
    "summary_oracle_dist",
    "detected",
];

#[derive(Clone, Debug, PartialEq)]
pub struct CellKey {
    pub task: String,
    pub method: String,
    pub eps: f64,
    pub delta: f64,
}

impl CellKey {
    pub fn of(row: &ResultRow) -> Self {
        CellKey {
            task: row.task.clone(),
            method: row.method.clone(),
            eps: row.eps,
            delta: row.delta,
        }
    }

    fn cmp(&self, other: &Self) -> Ordering {
        self.task
            .cmp(&other.task)
            .then_with(|| self.method.cmp(&other.method))
            .then_with(|| self.eps.total_cmp(&other.eps))
            .then_with(|| self.delta.total_cmp(&other.delta))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Spread {
    pub median: f64,
    pub iqr: f64,
}

impl Spread {
    /// `None` for an empty column.
    pub fn of(values: &[f64]) -> Option<Spread> {
        if values.is_empty() {
            return None;
        }
        Some(Spread {
            median: quantile(values, 0.5),
            iqr: quantile(values, 0.75) - quantile(values, 0.25),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellSummary {
    pub key: CellKey,
    pub rows: usize,
    /// One entry per name in [`METRICS`]; `detected` is summarized as a 0/1
    /// column, so its median is the majority flag and the flag rate is kept
    /// separately.
    pub metrics: Vec<Option<Spread>>,
    pub flag_rate: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub cells: Vec<CellSummary>,
    /// Requested cells with no rows.
    pub missing: Vec<CellKey>,
}

fn metric_values(rows: &[&ResultRow], metric: &str) -> Vec<f64> {
    rows.iter()
        .filter_map(|r| match metric {
            "rmse" => Some(r.rmse),
            "coverage" => Some(r.coverage),
            "posterior_mmd" => r.posterior_mmd,
            "predictive_mmd" => Some(r.predictive_mmd),
            "summary_oracle_dist" => Some(r.summary_oracle_dist),
            "detected" => Some(if r.detected { 1.0 } else { 0.0 }),
            _ => None,
        })
        .collect()
}

/// Groups `rows` by cell in sorted key order. Every key in `requested` that
/// has no rows is listed in `missing`.
pub fn summarize(rows: &[ResultRow], requested: &[CellKey]) -> Summary {
    let mut keys: Vec<CellKey> = Vec::new();
    for r in rows {
        let k = CellKey::of(r);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.sort_by(CellKey::cmp);
    let cells = keys
        .into_iter()
        .map(|key| {
            let members: Vec<&ResultRow> = rows.iter().filter(|r| CellKey::of(r) == key).collect();
            let flags = members.iter().filter(|r| r.detected).count();
            CellSummary {
                rows: members.len(),
                metrics: METRICS
                    .iter()
                    .map(|m| Spread::of(&metric_values(&members, m)))
                    .collect(),
                flag_rate: flags as f64 / members.len() as f64,
                key,
            }
        })
        .collect::<Vec<_>>();
    let missing = requested
        .iter()
        .filter(|k| !cells.iter().any(|c| &c.key == *k))
        .cloned()
        .collect();
    Summary { cells, missing }
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| HarnessError::format(path, e))?;
    let header = reader
        .headers()
        .map_err(|e| HarnessError::format(path, e))?;
    if header.iter().collect::<Vec<_>>().join(",") != ResultRow::CSV_HEADER {
        return Err(HarnessError::format(path, "unexpected CSV header"));
    }
    reader
        .deserialize()
        .map(|r| r.map_err(|e| HarnessError::format(path, e)))
        .collect()
}

impl Summary {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("task,method,eps,delta,rows");
        for m in METRICS {
            write!(out, ",{m}_median,{m}_iqr").unwrap();
        }
        out.push_str(",flag_rate\n");
        for c in &self.cells {
            write!(
                out,
                "{},{},{},{},{}",
                c.key.task, c.key.method, c.key.eps, c.key.delta, c.rows
            )
            .unwrap();
            for s in &c.metrics {
                match s {
                    Some(s) => write!(out, ",{},{}", s.median, s.iqr).unwrap(),
                    None => out.push_str(",,"),
                }
            }
            writeln!(out, ",{}", c.flag_rate).unwrap();
        }
        out
    }

    /// Fixed-width table, `median [IQR]` per metric.
    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<10} {:<10} {:>6} {:>6} {:>5}",
            "task", "method", "eps", "delta", "rows"
        );
        for m in &METRICS[..5] {
            write!(out, " {:>22}", m).unwrap();
        }
        out.push_str(" flag_rate\n");
        for c in &self.cells {
            write!(
                out,
                "{:<10} {:<10} {:>6} {:>6} {:>5}",
                c.key.task, c.key.method, c.key.eps, c.key.delta, c.rows
            )
            .unwrap();
            for s in &c.metrics[..5] {
                let cell = s
                    .map(|s| format!("{:.4} [{:.4}]", s.median, s.iqr))
                    .unwrap_or_else(|| "-".into());
                write!(out, " {:>22}", cell).unwrap();
            }
            writeln!(out, " {:>9.3}", c.flag_rate).unwrap();
        }
        for k in &self.missing {
            writeln!(
                out,
                "missing: {} {} eps={} delta={}",
                k.task, k.method, k.eps, k.delta
            )
            .unwrap();
        }
        out
    }
}
