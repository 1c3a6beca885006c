//! Huber ε-contamination of observed datasets.

use alloc::vec::Vec;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, invalid, Result};
use crate::linalg::Matrix;
use crate::simulators::{OupTask, Task};

/// Contaminated dataset plus the (sorted) rows that were altered.
#[derive(Clone, Debug, PartialEq)]
pub struct Contaminated {
    pub data: Matrix,
    pub replaced: Vec<usize>,
}

fn check_eps(eps: f64) -> Result<()> {
    ensure!(
        (0.0..=1.0).contains(&eps),
        "ε must lie in [0, 1], got {}",
        eps
    );
    Ok(())
}

/// round(ε·n) distinct rows, uniformly chosen, ascending.
fn choose_rows<R: Rng + ?Sized>(n: usize, eps: f64, rng: &mut R) -> Vec<usize> {
    let k = (libm::round(eps * n as f64) as usize).min(n);
    if k == 0 {
        return Vec::new();
    }
    let mut rows = index::sample(rng, n, k).into_vec();
    rows.sort_unstable();
    rows
}

/// Each row is independently replaced, with probability ε, by z·δ·1 with a
/// uniform sign z.
pub fn contaminate_gaussian<R: Rng + ?Sized>(
    data: &Matrix,
    eps: f64,
    delta: f64,
    rng: &mut R,
) -> Result<Contaminated> {
    check_eps(eps)?;
    ensure!(
        delta >= 0.0 && delta.is_finite(),
        "δ must be finite and non-negative"
    );
    let mut out = data.clone();
    let mut replaced = Vec::new();
    for i in 0..out.rows() {
        if rng.random::<f64>() < eps {
            let z = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            out.row_mut(i).iter_mut().for_each(|v| *v = z * delta);
            replaced.push(i);
        }
    }
    Ok(Contaminated {
        data: out,
        replaced,
    })
}

/// Replaces round(ε·N) trajectories by fresh ones simulated at θ_c with
/// diffusion variance σ²_c.
pub fn contaminate_oup<R: Rng + ?Sized>(
    task: &OupTask,
    data: &Matrix,
    eps: f64,
    theta_c: [f64; 2],
    sigma2_c: f64,
    rng: &mut R,
) -> Result<Contaminated> {
    check_eps(eps)?;
    ensure!(
        data.cols() == task.steps,
        "trajectories have length {}, task expects {}",
        data.cols(),
        task.steps
    );
    let replaced = choose_rows(data.rows(), eps, rng);
    let mut out = data.clone();
    for &i in &replaced {
        let traj = task.trajectory(&theta_c, sigma2_c, rng)?;
        out.row_mut(i).copy_from_slice(&traj);
    }
    Ok(Contaminated {
        data: out,
        replaced,
    })
}

/// For round(ε·N) trajectories, moves `fraction` of every Saturday and
/// Sunday count to the following Monday. Day 0 is a Monday; mass whose
/// Monday lies past the last day is dropped.
pub fn contaminate_sir<R: Rng + ?Sized>(
    data: &Matrix,
    eps: f64,
    fraction: f64,
    rng: &mut R,
) -> Result<Contaminated> {
    check_eps(eps)?;
    ensure!(
        (0.0..=1.0).contains(&fraction),
        "underreport fraction must lie in [0, 1]"
    );
    let replaced = choose_rows(data.rows(), eps, rng);
    let mut out = data.clone();
    let days = data.cols();
    for &i in &replaced {
        let row = out.row_mut(i);
        for t in 0..days {
            let weekday = t % 7;
            if weekday < 5 {
                continue;
            }
            let moved = fraction * row[t];
            row[t] -= moved;
            let monday = t + 7 - weekday;
            if monday < days {
                row[monday] += moved;
            }
        }
    }
    Ok(Contaminated {
        data: out,
        replaced,
    })
}

fn default_theta_c() -> [f64; 2] {
    [-0.5, 1.0]
}

fn default_sigma2_c() -> f64 {
    0.5
}

fn default_underreport() -> f64 {
    0.05
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ContaminationSpec {
    GaussianOutlier {
        eps: f64,
        delta: f64,
    },
    OupReplace {
        eps: f64,
        #[serde(default = "default_theta_c")]
        theta_c: [f64; 2],
        #[serde(default = "default_sigma2_c")]
        sigma2_c: f64,
    },
    SirWeekend {
        eps: f64,
        #[serde(default = "default_underreport")]
        underreport: f64,
    },
}

impl ContaminationSpec {
    pub fn eps(&self) -> f64 {
        match *self {
            ContaminationSpec::GaussianOutlier { eps, .. }
            | ContaminationSpec::OupReplace { eps, .. }
            | ContaminationSpec::SirWeekend { eps, .. } => eps,
        }
    }

    /// Outlier magnitude; 0 for kinds without one.
    pub fn delta(&self) -> f64 {
        match *self {
            ContaminationSpec::GaussianOutlier { delta, .. } => delta,
            _ => 0.0,
        }
    }

    /// The default contamination kind for a task.
    pub fn for_task(task: &Task, eps: f64, delta: f64) -> Self {
        match task {
            Task::Gaussian(_) | Task::Factor(_) => {
                ContaminationSpec::GaussianOutlier { eps, delta }
            }
            Task::Oup(_) => ContaminationSpec::OupReplace {
                eps,
                theta_c: default_theta_c(),
                sigma2_c: default_sigma2_c(),
            },
            Task::Sir(_) => ContaminationSpec::SirWeekend {
                eps,
                underreport: default_underreport(),
            },
        }
    }

    pub fn apply<R: Rng + ?Sized>(
        &self,
        task: &Task,
        data: &Matrix,
        rng: &mut R,
    ) -> Result<Contaminated> {
        match (self, task) {
            (
                ContaminationSpec::GaussianOutlier { eps, delta },
                Task::Gaussian(_) | Task::Factor(_),
            ) => contaminate_gaussian(data, *eps, *delta, rng),
            (
                ContaminationSpec::OupReplace {
                    eps,
                    theta_c,
                    sigma2_c,
                },
                Task::Oup(t),
            ) => contaminate_oup(t, data, *eps, *theta_c, *sigma2_c, rng),
            (ContaminationSpec::SirWeekend { eps, underreport }, Task::Sir(_)) => {
                contaminate_sir(data, *eps, *underreport, rng)
            }
            _ => Err(invalid!(
                "contamination {:?} does not apply to task {}",
                self,
                task.name()
            )),
        }
    }
}
