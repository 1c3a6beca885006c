//! Simulator tasks with fixed summary statistics.
//!
//! A dataset is a [`Matrix`] with one observation per row: a point in R^d
//! for the static tasks, a whole trajectory of length T for the time series
//! tasks.

use alloc::borrow::Cow;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, invalid, Result};
use crate::linalg::{pseudo_inverse_full_column_rank, smallest_singular_value, Matrix};
use crate::rng::stream_rng;
use crate::stats::{correlation, invariant_correlation, invariant_mean, median};

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Euler steps between two observation times.
fn substeps(dt: f64) -> Result<usize> {
    ensure!(dt > 0.0 && dt <= 1.0, "dt must lie in (0, 1], got {}", dt);
    let k = libm::round(1.0 / dt);
    ensure!(
        (k * dt - 1.0).abs() < 1e-9,
        "1/dt must be an integer, got dt = {}",
        dt
    );
    Ok(k as usize)
}

fn column_means_invariant(data: &Matrix) -> Vec<f64> {
    (0..data.cols())
        .map(|j| {
            let mut col: Vec<f64> = (0..data.rows()).map(|i| data.get(i, j)).collect();
            invariant_mean(&mut col)
        })
        .collect()
}

/// Conjugate posterior for a N(0, I) prior and unit-variance Gaussian
/// observations: returns the mean and the isotropic variance.
pub fn gaussian_posterior(xbar: &[f64], n: usize) -> (Vec<f64>, f64) {
    let n = n as f64;
    let shrink = n / (n + 1.0);
    (xbar.iter().map(|x| shrink * x).collect(), 1.0 / (n + 1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianTask {
    pub dim: usize,
    pub n: usize,
}

impl GaussianTask {
    pub fn new(dim: usize, n: usize) -> Result<Self> {
        ensure!(dim >= 1 && n >= 1, "need dim >= 1 and n >= 1");
        Ok(GaussianTask { dim, n })
    }
}

impl Default for GaussianTask {
    fn default() -> Self {
        GaussianTask { dim: 2, n: 100 }
    }
}

/// x | θ ~ N(Aθ, I) with a frozen random projection A (D × 2); the summary
/// is A⁺ x̄.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FactorDoc", into = "FactorDoc")]
pub struct FactorTask {
    pub n: usize,
    projection: Matrix,
    pinv: Matrix,
}

#[derive(Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FactorDoc {
    n: usize,
    projection: Matrix,
}

impl TryFrom<FactorDoc> for FactorTask {
    type Error = crate::Error;
    fn try_from(doc: FactorDoc) -> Result<Self> {
        FactorTask::with_projection(doc.projection, doc.n)
    }
}

impl From<FactorTask> for FactorDoc {
    fn from(t: FactorTask) -> Self {
        FactorDoc {
            n: t.n,
            projection: t.projection,
        }
    }
}

impl FactorTask {
    pub const THETA_DIM: usize = 2;

    pub fn new<R: Rng + ?Sized>(observed_dim: usize, n: usize, rng: &mut R) -> Result<Self> {
        ensure!(
            observed_dim >= 2,
            "factor model needs D >= 2, got {}",
            observed_dim
        );
        loop {
            let data = (0..observed_dim * Self::THETA_DIM)
                .map(|_| normal(rng))
                .collect();
            let a = Matrix::from_vec(observed_dim, Self::THETA_DIM, data)?;
            if smallest_singular_value(&a)? >= 1e-8 {
                return Self::with_projection(a, n);
            }
        }
    }

    pub fn with_projection(projection: Matrix, n: usize) -> Result<Self> {
        ensure!(n >= 1, "n must be at least 1");
        ensure!(
            projection.cols() == Self::THETA_DIM && projection.rows() >= 2,
            "projection must be D x 2, got {:?}",
            projection.shape()
        );
        ensure!(
            smallest_singular_value(&projection)? >= 1e-8,
            "projection is rank deficient"
        );
        let pinv = pseudo_inverse_full_column_rank(&projection)?;
        Ok(FactorTask {
            n,
            projection,
            pinv,
        })
    }

    pub fn projection(&self) -> &Matrix {
        &self.projection
    }

    pub fn pseudo_inverse(&self) -> &Matrix {
        &self.pinv
    }

    pub fn observed_dim(&self) -> usize {
        self.projection.rows()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OupTask {
    pub n: usize,
    pub steps: usize,
    pub x0: f64,
    pub sigma2: f64,
    pub dt: f64,
}

impl Default for OupTask {
    fn default() -> Self {
        OupTask {
            n: 100,
            steps: 25,
            x0: 10.0,
            sigma2: 0.1,
            dt: 1.0,
        }
    }
}

impl OupTask {
    /// One trajectory X_1..X_T; X_0 is not stored.
    pub fn trajectory<R: Rng + ?Sized>(
        &self,
        theta: &[f64],
        sigma2: f64,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        let k = substeps(self.dt)?;
        let target = libm::exp(theta[1]);
        let noise = libm::sqrt(sigma2 * self.dt);
        let mut x = self.x0;
        let mut out = Vec::with_capacity(self.steps);
        for _ in 0..self.steps {
            for _ in 0..k {
                x += theta[0] * (target - x) * self.dt + noise * normal(rng);
            }
            out.push(x);
        }
        Ok(out)
    }

    /// `count` trajectories at θ and diffusion variance `sigma2`, without a
    /// prior check (contaminants live outside the prior).
    pub fn simulate_with<R: Rng + ?Sized>(
        &self,
        theta: &[f64],
        sigma2: f64,
        count: usize,
        rng: &mut R,
    ) -> Result<Matrix> {
        ensure!(theta.len() == 2, "OUP θ has 2 entries, got {}", theta.len());
        ensure!(sigma2 >= 0.0, "diffusion variance must be non-negative");
        let mut data = Vec::with_capacity(count * self.steps);
        for _ in 0..count {
            data.extend(self.trajectory(theta, sigma2, rng)?);
        }
        Ok(Matrix::from_raw(count, self.steps, data))
    }
}

/// Compartment fractions plus the diffusing reproduction number.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SirState {
    pub s: f64,
    pub i: f64,
    pub r: f64,
    pub r0: f64,
}

impl SirState {
    /// Compartments clipped to [0, 1]; R₀ reflected at zero.
    pub fn clipped(self) -> SirState {
        SirState {
            s: self.s.clamp(0.0, 1.0),
            i: self.i.clamp(0.0, 1.0),
            r: self.r.clamp(0.0, 1.0),
            r0: self.r0.abs(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SirTask {
    pub n: usize,
    pub days: usize,
    pub population: f64,
    pub sigma: f64,
    pub eta: f64,
    pub initial: [f64; 3],
    pub dt: f64,
}

impl Default for SirTask {
    fn default() -> Self {
        SirTask {
            n: 100,
            days: 365,
            population: 10_000.0,
            sigma: 0.05,
            eta: 0.05,
            initial: [0.999, 0.001, 0.0],
            dt: 0.5,
        }
    }
}

impl SirTask {
    /// One unclipped Euler-Maruyama step with standard normal draw `xi`.
    pub fn step(&self, st: SirState, beta: f64, gamma: f64, xi: f64) -> SirState {
        let dt = self.dt;
        let r0_bar = beta / gamma;
        let beta_eff = gamma * st.r0;
        let infections = beta_eff * st.s * st.i * dt;
        let recoveries = gamma * st.i * dt;
        SirState {
            s: st.s - infections,
            i: st.i + infections - recoveries,
            r: st.r + recoveries,
            r0: st.r0
                + self.eta * (r0_bar - st.r0) * dt
                + self.sigma * libm::sqrt(st.r0.abs() * dt) * xi,
        }
    }

    pub fn initial_state(&self, beta: f64, gamma: f64) -> SirState {
        SirState {
            s: self.initial[0],
            i: self.initial[1],
            r: self.initial[2],
            r0: beta / gamma,
        }
    }

    /// Daily counts population·I at the end of each day.
    pub fn trajectory<R: Rng + ?Sized>(&self, theta: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        let k = substeps(self.dt)?;
        let (beta, gamma) = (theta[0], theta[1]);
        let mut st = self.initial_state(beta, gamma);
        let mut out = Vec::with_capacity(self.days);
        for _ in 0..self.days {
            for _ in 0..k {
                let xi = normal(rng);
                st = self.step(st, beta, gamma, xi).clipped();
            }
            out.push(self.population * st.i);
        }
        Ok(out)
    }

    /// Per-trajectory summary: log1p of mean, median, peak, peak day and
    /// the day half the cumulative count is reached, then lag-1
    /// autocorrelation.
    pub fn trajectory_summary(x: &[f64]) -> [f64; 6] {
        let n = x.len();
        let mean = x.iter().sum::<f64>() / n as f64;
        let (peak_day, peak) =
            x.iter()
                .copied()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, v)| {
                    if v > bv {
                        (i, v)
                    } else {
                        (bi, bv)
                    }
                });
        let total: f64 = x.iter().sum();
        let mut cum = 0.0;
        let mut half_day = n - 1;
        for (t, v) in x.iter().enumerate() {
            cum += v;
            if cum >= 0.5 * total {
                half_day = t;
                break;
            }
        }
        let lag = if n > 1 {
            correlation(&x[..n - 1], &x[1..])
        } else {
            0.0
        };
        [
            libm::log1p(mean.max(0.0)),
            libm::log1p(median(x).max(0.0)),
            libm::log1p(peak.max(0.0)),
            libm::log1p(peak_day as f64),
            libm::log1p(half_day as f64),
            lag,
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Task {
    Gaussian(GaussianTask),
    Factor(FactorTask),
    Oup(OupTask),
    Sir(SirTask),
}

impl Task {
    pub fn name(&self) -> &'static str {
        match self {
            Task::Gaussian(_) => "gaussian",
            Task::Factor(_) => "factor",
            Task::Oup(_) => "oup",
            Task::Sir(_) => "sir",
        }
    }

    pub fn theta_dim(&self) -> usize {
        match self {
            Task::Gaussian(t) => t.dim,
            _ => 2,
        }
    }

    /// Width of one dataset row (d for static tasks, T for time series).
    pub fn row_dim(&self) -> usize {
        match self {
            Task::Gaussian(t) => t.dim,
            Task::Factor(t) => t.observed_dim(),
            Task::Oup(t) => t.steps,
            Task::Sir(t) => t.days,
        }
    }

    /// Per-observation data dimension and trajectory length.
    pub fn data_shape(&self) -> (usize, usize) {
        match self {
            Task::Gaussian(_) | Task::Factor(_) => (self.row_dim(), 1),
            Task::Oup(t) => (1, t.steps),
            Task::Sir(t) => (1, t.days),
        }
    }

    pub fn n(&self) -> usize {
        match self {
            Task::Gaussian(t) => t.n,
            Task::Factor(t) => t.n,
            Task::Oup(t) => t.n,
            Task::Sir(t) => t.n,
        }
    }

    pub fn summary_dim(&self) -> usize {
        match self {
            Task::Gaussian(t) => t.dim,
            Task::Factor(_) => 2,
            Task::Oup(_) => 3,
            Task::Sir(_) => 6,
        }
    }

    /// Copy of the task with a different dataset size.
    pub fn with_n(&self, n: usize) -> Task {
        let mut t = self.clone();
        match &mut t {
            Task::Gaussian(g) => g.n = n,
            Task::Factor(f) => f.n = n,
            Task::Oup(o) => o.n = n,
            Task::Sir(s) => s.n = n,
        }
        t
    }

    pub fn sample_prior<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            Task::Gaussian(_) | Task::Factor(_) => {
                (0..self.theta_dim()).map(|_| normal(rng)).collect()
            }
            Task::Oup(_) => vec![2.0 * rng.random::<f64>(), 4.0 * rng.random::<f64>() - 2.0],
            Task::Sir(_) => loop {
                let a = 0.5 * rng.random::<f64>();
                let b = 0.5 * rng.random::<f64>();
                let (beta, gamma) = if a > b { (a, b) } else { (b, a) };
                if gamma > 0.0 && gamma < beta {
                    break vec![beta, gamma];
                }
            },
        }
    }

    /// Checks that θ lies in the prior support.
    pub fn check_prior(&self, theta: &[f64]) -> Result<()> {
        ensure!(
            theta.len() == self.theta_dim(),
            "θ has {} entries, {} expects {}",
            theta.len(),
            self.name(),
            self.theta_dim()
        );
        ensure!(theta.iter().all(|v| v.is_finite()), "θ is not finite");
        match self {
            Task::Gaussian(_) | Task::Factor(_) => Ok(()),
            Task::Oup(_) => {
                ensure!(
                    (0.0..=2.0).contains(&theta[0]) && (-2.0..=2.0).contains(&theta[1]),
                    "θ = {:?} outside [0,2] x [-2,2]",
                    theta
                );
                Ok(())
            }
            Task::Sir(_) => {
                let (beta, gamma) = (theta[0], theta[1]);
                ensure!(
                    0.0 < gamma && gamma < beta && beta < 0.5,
                    "need 0 < γ < β < 0.5, got β = {}, γ = {}",
                    beta,
                    gamma
                );
                Ok(())
            }
        }
    }

    /// Nearest point of the prior support (up to a small margin on open
    /// boundaries).
    pub fn project_to_prior(&self, theta: &[f64]) -> Vec<f64> {
        match self {
            Task::Gaussian(_) | Task::Factor(_) => theta.to_vec(),
            Task::Oup(_) => vec![theta[0].clamp(0.0, 2.0), theta[1].clamp(-2.0, 2.0)],
            Task::Sir(_) => {
                const MARGIN: f64 = 1e-6;
                let beta = theta[0].clamp(2.0 * MARGIN, 0.5 - MARGIN);
                let gamma = theta[1].clamp(MARGIN, beta - MARGIN);
                vec![beta, gamma]
            }
        }
    }

    /// One dataset of `n()` observations at θ.
    pub fn simulate<R: Rng + ?Sized>(&self, theta: &[f64], rng: &mut R) -> Result<Matrix> {
        self.check_prior(theta)?;
        let n = self.n();
        match self {
            Task::Gaussian(t) => {
                let data = (0..n * t.dim)
                    .map(|k| theta[k % t.dim] + normal(rng))
                    .collect();
                Ok(Matrix::from_raw(n, t.dim, data))
            }
            Task::Factor(t) => {
                let mean = t.projection.matvec(theta)?;
                let d = mean.len();
                let data = (0..n * d).map(|k| mean[k % d] + normal(rng)).collect();
                Ok(Matrix::from_raw(n, d, data))
            }
            Task::Oup(t) => t.simulate_with(theta, t.sigma2, n, rng),
            Task::Sir(t) => {
                let mut data = Vec::with_capacity(n * t.days);
                for _ in 0..n {
                    data.extend(t.trajectory(theta, rng)?);
                }
                Ok(Matrix::from_raw(n, t.days, data))
            }
        }
    }

    /// Summary statistic; exactly invariant to reordering the rows.
    pub fn summary(&self, data: &Matrix) -> Result<Vec<f64>> {
        ensure!(data.rows() >= 1, "empty dataset");
        ensure!(
            data.cols() == self.row_dim(),
            "dataset rows have width {}, {} expects {}",
            data.cols(),
            self.name(),
            self.row_dim()
        );
        match self {
            Task::Gaussian(_) => Ok(column_means_invariant(data)),
            Task::Factor(t) => t.pinv.matvec(&column_means_invariant(data)),
            Task::Oup(_) => Ok(oup_summary(data).to_vec()),
            Task::Sir(_) => {
                let per: Vec<[f64; 6]> = data.row_iter().map(SirTask::trajectory_summary).collect();
                Ok((0..6)
                    .map(|j| invariant_mean(&mut per.iter().map(|s| s[j]).collect::<Vec<_>>()))
                    .collect())
            }
        }
    }
}

/// Mean, variance and lag-1 correlation pooled over all trajectories.
pub fn oup_summary(data: &Matrix) -> [f64; 3] {
    let mut all = data.as_slice().to_vec();
    let s1 = invariant_mean(&mut all);
    let mut sq: Vec<f64> = data
        .as_slice()
        .iter()
        .map(|x| (x - s1) * (x - s1))
        .collect();
    let s2 = invariant_mean(&mut sq);
    let t = data.cols();
    let (mut lead, mut lag) = (Vec::new(), Vec::new());
    if t > 1 {
        for row in data.row_iter() {
            lead.extend_from_slice(&row[..t - 1]);
            lag.extend_from_slice(&row[1..]);
        }
    }
    let s3 = if lead.is_empty() {
        0.0
    } else {
        invariant_correlation(&lead, &lag)
    };
    [s1, s2, s3]
}

/// One simulated training record.
#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub theta: Vec<f64>,
    pub data: Matrix,
    pub summary: Vec<f64>,
}

const POOL_STREAM: &str = "pool";

/// Record `index` of the pool seeded by `master_seed`. Each index has its own
/// random stream, so records can be produced in any order.
pub fn simulate_record(task: &Task, master_seed: u64, index: usize) -> Result<Record> {
    let mut rng = stream_rng(master_seed, POOL_STREAM, index as u64);
    let theta = task.sample_prior(&mut rng);
    let data = task.simulate(&theta, &mut rng)?;
    let summary = task.summary(&data)?;
    Ok(Record {
        theta,
        data,
        summary,
    })
}

/// Simulated (θ, dataset, summary) triples. Datasets may be dropped to save
/// memory; they are then regenerated on demand from the seed.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingPool {
    pub task_name: String,
    pub master_seed: u64,
    pub thetas: Matrix,
    pub summaries: Matrix,
    pub datasets: Vec<Matrix>,
}

impl TrainingPool {
    /// Assembles a pool from records `0..records.len()` in index order.
    pub fn from_records(
        task: &Task,
        master_seed: u64,
        records: Vec<Record>,
        keep_datasets: bool,
    ) -> Result<Self> {
        ensure!(!records.is_empty(), "a pool needs at least one record");
        let m = records.len();
        let mut thetas = Vec::with_capacity(m * task.theta_dim());
        let mut summaries = Vec::with_capacity(m * task.summary_dim());
        let mut datasets = Vec::new();
        for r in records {
            thetas.extend_from_slice(&r.theta);
            summaries.extend_from_slice(&r.summary);
            if keep_datasets {
                datasets.push(r.data);
            }
        }
        Ok(TrainingPool {
            task_name: task.name().into(),
            master_seed,
            thetas: Matrix::from_vec(m, task.theta_dim(), thetas)?,
            summaries: Matrix::from_vec(m, task.summary_dim(), summaries)?,
            datasets,
        })
    }

    pub fn len(&self) -> usize {
        self.thetas.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn has_datasets(&self) -> bool {
        self.datasets.len() == self.len()
    }

    /// Dataset `i`, stored or re-simulated.
    pub fn dataset(&self, task: &Task, i: usize) -> Result<Cow<'_, Matrix>> {
        if i >= self.len() {
            return Err(invalid!(
                "record {} out of range for a pool of {}",
                i,
                self.len()
            ));
        }
        if self.has_datasets() {
            return Ok(Cow::Borrowed(&self.datasets[i]));
        }
        Ok(Cow::Owned(simulate_record(task, self.master_seed, i)?.data))
    }
}

pub fn build_training_pool(
    task: &Task,
    m: usize,
    master_seed: u64,
    keep_datasets: bool,
) -> Result<TrainingPool> {
    ensure!(m >= 1, "pool size must be at least 1");
    let records = (0..m)
        .map(|i| simulate_record(task, master_seed, i))
        .collect::<Result<Vec<_>>>()?;
    TrainingPool::from_records(task, master_seed, records, keep_datasets)
}
