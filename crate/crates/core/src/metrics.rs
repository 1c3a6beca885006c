//! Evaluation metrics for posterior samples and adapted summaries.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::kernels::{mmd2_exact, pooled_bandwidth};
use crate::linalg::{squared_distance, Matrix};
use crate::simulators::Task;
use crate::stats::quantile_sorted;

/// `sqrt((1/d) ‖θ̄ − θ*‖²)` with θ̄ the sample mean.
pub fn rmse(samples: &Matrix, theta_star: &[f64]) -> Result<f64> {
    ensure!(samples.rows() >= 1, "rmse needs at least one sample");
    ensure!(
        samples.cols() == theta_star.len(),
        "θ* has the wrong length"
    );
    let mean = samples.column_means();
    Ok(libm::sqrt(
        squared_distance(&mean, theta_star) / theta_star.len() as f64,
    ))
}

/// Fraction of coordinates whose central (1 − α) interval contains θ*_j.
pub fn coverage(samples: &Matrix, theta_star: &[f64], alpha: f64) -> Result<f64> {
    ensure!(samples.rows() >= 10, "coverage needs at least 10 samples");
    ensure!(
        samples.cols() == theta_star.len(),
        "θ* has the wrong length"
    );
    ensure!(alpha > 0.0 && alpha < 1.0, "α must lie in (0, 1)");
    let d = theta_star.len();
    let mut hits = 0usize;
    for (j, t) in theta_star.iter().enumerate() {
        let mut col: Vec<f64> = (0..samples.rows()).map(|i| samples.get(i, j)).collect();
        col.sort_unstable_by(f64::total_cmp);
        let lo = quantile_sorted(&col, alpha / 2.0);
        let hi = quantile_sorted(&col, 1.0 - alpha / 2.0);
        if lo <= *t && *t <= hi {
            hits += 1;
        }
    }
    Ok(hits as f64 / d as f64)
}

/// Square root of the exact biased MMD² with a median-heuristic bandwidth
/// on the pooled samples.
pub fn sample_mmd(a: &Matrix, b: &Matrix) -> Result<f64> {
    let bw = pooled_bandwidth(a, b)?;
    Ok(libm::sqrt(mmd2_exact(bw, a, b)?.max(0.0)))
}

/// MMD between `n_rep` posterior-predictive observations and the clean
/// dataset. Each replicate resamples a θ from `posterior`, projects it onto
/// the prior support and simulates one observation.
pub fn predictive_mmd<R: Rng + ?Sized>(
    task: &Task,
    posterior: &Matrix,
    clean: &Matrix,
    n_rep: usize,
    rng: &mut R,
) -> Result<f64> {
    ensure!(n_rep >= 1, "need at least one replicate");
    ensure!(posterior.rows() >= 1, "empty posterior sample");
    let single = task.with_n(1);
    let mut data = Vec::with_capacity(n_rep * task.row_dim());
    for _ in 0..n_rep {
        let i = rng.random_range(0..posterior.rows());
        let theta = task.project_to_prior(posterior.row(i));
        data.extend_from_slice(single.simulate(&theta, rng)?.as_slice());
    }
    sample_mmd(&Matrix::from_vec(n_rep, task.row_dim(), data)?, clean)
}

pub fn summary_oracle_distance(s_star: &[f64], s_oracle: &[f64]) -> Result<f64> {
    ensure!(
        s_star.len() == s_oracle.len(),
        "summaries have lengths {} and {}",
        s_star.len(),
        s_oracle.len()
    );
    Ok(libm::sqrt(squared_distance(s_star, s_oracle)))
}

/// One line of the results table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub task: String,
    pub method: String,
    pub eps: f64,
    pub delta: f64,
    pub seed: u64,
    pub rmse: f64,
    pub coverage: f64,
    pub posterior_mmd: Option<f64>,
    pub predictive_mmd: f64,
    pub summary_oracle_dist: f64,
    pub detected: bool,
    pub wall_time_ms: u64,
}

impl ResultRow {
    pub const CSV_HEADER: &'static str = "task,method,eps,delta,seed,rmse,coverage,posterior_mmd,predictive_mmd,summary_oracle_dist,detected,wall_time_ms";

    /// CSV line without a trailing newline. Floats print in shortest
    /// round-trip form.
    pub fn to_csv_line(&self) -> String {
        let pm = self
            .posterior_mmd
            .map(|v| format!("{}", v))
            .unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.task,
            self.method,
            self.eps,
            self.delta,
            self.seed,
            self.rmse,
            self.coverage,
            pm,
            self.predictive_mmd,
            self.summary_oracle_dist,
            self.detected,
            self.wall_time_ms
        )
    }

    pub fn is_finite(&self) -> bool {
        [
            self.eps,
            self.delta,
            self.rmse,
            self.coverage,
            self.predictive_mmd,
            self.summary_oracle_dist,
        ]
        .iter()
        .chain(self.posterior_mmd.iter())
        .all(|v| v.is_finite())
    }
}
