//! Deterministic unconstrained minimizers: L-BFGS with a strong-Wolfe line
//! search, and fixed-step gradient descent.

use alloc::collections::VecDeque;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, invalid, Result};
use crate::linalg::dot;

/// Objective value and gradient at a point.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectiveEval {
    pub value: f64,
    pub gradient: Vec<f64>,
}

impl ObjectiveEval {
    fn is_finite(&self) -> bool {
        self.value.is_finite() && self.gradient.iter().all(|g| g.is_finite())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimOptions {
    pub max_iters: usize,
    /// Convergence threshold on the infinity norm of the gradient.
    pub grad_tol: f64,
    /// L-BFGS memory.
    pub history: usize,
    pub c1: f64,
    pub c2: f64,
    /// Fixed step for gradient descent.
    pub step_size: f64,
    /// Objective evaluations allowed per line search.
    pub max_line_search: usize,
}

impl Default for OptimOptions {
    fn default() -> Self {
        OptimOptions {
            max_iters: 100,
            grad_tol: 1e-7,
            history: 10,
            c1: 1e-4,
            c2: 0.9,
            step_size: 0.05,
            max_line_search: 25,
        }
    }
}

impl OptimOptions {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            0.0 < self.c1 && self.c1 < self.c2 && self.c2 < 1.0,
            "need 0 < c1 < c2 < 1, got c1={} c2={}",
            self.c1,
            self.c2
        );
        ensure!(self.max_iters >= 1, "max_iters must be at least 1");
        ensure!(self.history >= 1, "history must be at least 1");
        ensure!(self.grad_tol >= 0.0, "grad_tol must be non-negative");
        ensure!(
            self.max_line_search >= 1,
            "max_line_search must be at least 1"
        );
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
    pub evaluations: usize,
    /// Accepted objective values, starting with the value at `x0`.
    pub values: Vec<f64>,
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn axpy_new(x: &[f64], t: f64, d: &[f64]) -> Vec<f64> {
    x.iter().zip(d).map(|(a, b)| a + t * b).collect()
}

/// Counts evaluations and remembers whether a non-finite value was seen.
struct Counted<F> {
    f: F,
    evaluations: usize,
    blew_up: bool,
}

impl<F: FnMut(&[f64]) -> ObjectiveEval> Counted<F> {
    fn eval(&mut self, x: &[f64]) -> Option<ObjectiveEval> {
        self.evaluations += 1;
        let e = (self.f)(x);
        if e.is_finite() {
            Some(e)
        } else {
            self.blew_up = true;
            None
        }
    }
}

fn start<F: FnMut(&[f64]) -> ObjectiveEval>(
    f: &mut Counted<F>,
    x0: &[f64],
    opts: &OptimOptions,
) -> Result<ObjectiveEval> {
    opts.validate()?;
    let e = f
        .eval(x0)
        .ok_or_else(|| invalid!("objective is not finite at the starting point"))?;
    ensure!(
        e.gradient.len() == x0.len(),
        "gradient has length {}, point has {}",
        e.gradient.len(),
        x0.len()
    );
    Ok(e)
}

/// Minimum of the cubic through two points with values and slopes,
/// clamped to `bounds`.
fn cubic_interpolate(
    (x1, f1, g1): (f64, f64, f64),
    (x2, f2, g2): (f64, f64, f64),
    bounds: Option<(f64, f64)>,
) -> f64 {
    let (lo, hi) = bounds.unwrap_or(if x1 <= x2 { (x1, x2) } else { (x2, x1) });
    let d1 = g1 + g2 - 3.0 * (f1 - f2) / (x1 - x2);
    let d2_sq = d1 * d1 - g1 * g2;
    if d2_sq >= 0.0 {
        let d2 = libm::sqrt(d2_sq);
        let min_pos = if x1 <= x2 {
            x2 - (x2 - x1) * ((g2 + d2 - d1) / (g2 - g1 + 2.0 * d2))
        } else {
            x1 - (x1 - x2) * ((g1 + d2 - d1) / (g1 - g2 + 2.0 * d2))
        };
        if min_pos.is_nan() {
            return 0.5 * (lo + hi);
        }
        min_pos.max(lo).min(hi)
    } else {
        0.5 * (lo + hi)
    }
}

#[derive(Clone)]
struct Probe {
    t: f64,
    e: ObjectiveEval,
    slope: f64,
}

enum Search {
    Accepted(Probe),
    Failed,
    NonFinite,
}

/// Strong-Wolfe line search with cubic interpolation (bracketing then zoom).
fn strong_wolfe<F: FnMut(&[f64]) -> ObjectiveEval>(
    f: &mut Counted<F>,
    x: &[f64],
    cur: &ObjectiveEval,
    d: &[f64],
    mut t: f64,
    opts: &OptimOptions,
) -> Search {
    const TOLERANCE_CHANGE: f64 = 1e-12;
    let f0 = cur.value;
    let gtd = dot(&cur.gradient, d);
    let d_norm = inf_norm(d);
    let eval = |f: &mut Counted<F>, t: f64| -> Option<Probe> {
        let e = f.eval(&axpy_new(x, t, d))?;
        let slope = dot(&e.gradient, d);
        Some(Probe { t, e, slope })
    };
    let armijo = |p: &Probe| p.e.value <= f0 + opts.c1 * p.t * gtd;
    let curvature = |p: &Probe| p.slope.abs() <= -opts.c2 * gtd;
    // One extra evaluation at the cubic minimizer through 0 and the accepted
    // point. Exact on quadratics, which restores finite termination there.
    let polish = |f: &mut Counted<F>,
                  p: Probe,
                  eval: &dyn Fn(&mut Counted<F>, f64) -> Option<Probe>,
                  armijo: &dyn Fn(&Probe) -> bool,
                  curvature: &dyn Fn(&Probe) -> bool| {
        let t = cubic_interpolate(
            (0.0, f0, gtd),
            (p.t, p.e.value, p.slope),
            Some((0.0, 4.0 * p.t)),
        );
        if !(t > 0.0) || (t - p.t).abs() <= 1e-3 * p.t {
            return p;
        }
        match eval(f, t) {
            Some(q) if q.e.value < p.e.value && armijo(&q) && curvature(&q) => q,
            _ => p,
        }
    };

    let Some(mut new) = eval(f, t) else {
        return Search::NonFinite;
    };
    let mut prev = Probe {
        t: 0.0,
        e: cur.clone(),
        slope: gtd,
    };
    let mut evals = 1;
    let mut bracket: Option<[Probe; 2]> = None;

    while evals < opts.max_line_search {
        if !armijo(&new) || (evals > 1 && new.e.value >= prev.e.value) {
            bracket = Some([prev, new.clone()]);
            break;
        }
        if curvature(&new) {
            return Search::Accepted(polish(f, new, &eval, &armijo, &curvature));
        }
        if new.slope >= 0.0 {
            bracket = Some([prev, new.clone()]);
            break;
        }
        let bounds = (new.t + 0.01 * (new.t - prev.t), new.t * 10.0);
        t = cubic_interpolate(
            (prev.t, prev.e.value, prev.slope),
            (new.t, new.e.value, new.slope),
            Some(bounds),
        );
        prev = new;
        new = match eval(f, t) {
            Some(p) => p,
            None => return Search::NonFinite,
        };
        evals += 1;
    }

    let Some(mut br) = bracket else {
        // evaluation budget spent while still extrapolating
        return if armijo(&new) && new.e.value < f0 {
            Search::Accepted(new)
        } else {
            Search::Failed
        };
    };

    let mut insufficient = false;
    let low_high = |br: &[Probe; 2]| {
        if br[0].e.value <= br[1].e.value {
            (0, 1)
        } else {
            (1, 0)
        }
    };
    let (mut low, mut high) = low_high(&br);
    while evals < opts.max_line_search {
        let (a, b) = (br[0].t, br[1].t);
        if (b - a).abs() * d_norm < TOLERANCE_CHANGE {
            break;
        }
        let mut t = cubic_interpolate(
            (a, br[0].e.value, br[0].slope),
            (b, br[1].e.value, br[1].slope),
            None,
        );
        let (bmin, bmax) = (a.min(b), a.max(b));
        let eps = 0.1 * (bmax - bmin);
        if (bmax - t).min(t - bmin) < eps {
            if insufficient || t >= bmax || t <= bmin {
                t = if (t - bmax).abs() < (t - bmin).abs() {
                    bmax - eps
                } else {
                    bmin + eps
                };
                insufficient = false;
            } else {
                insufficient = true;
            }
        } else {
            insufficient = false;
        }
        let Some(p) = eval(f, t) else {
            return Search::NonFinite;
        };
        evals += 1;
        if !armijo(&p) || p.e.value >= br[low].e.value {
            br[high] = p;
            (low, high) = low_high(&br);
        } else {
            if curvature(&p) {
                return Search::Accepted(polish(f, p, &eval, &armijo, &curvature));
            }
            if p.slope * (br[high].t - br[low].t) >= 0.0 {
                br[high] = br[low].clone();
            }
            br[low] = p;
        }
    }
    let best = &br[low];
    if best.t > 0.0 && armijo(best) && best.e.value < f0 {
        Search::Accepted(best.clone())
    } else {
        Search::Failed
    }
}

/// Armijo backtracking along steepest descent; `None` when no decrease is found.
fn backtrack<F: FnMut(&[f64]) -> ObjectiveEval>(
    f: &mut Counted<F>,
    x: &[f64],
    cur: &ObjectiveEval,
    opts: &OptimOptions,
) -> Option<Probe> {
    let d: Vec<f64> = cur.gradient.iter().map(|g| -g).collect();
    let gtd = -dot(&cur.gradient, &cur.gradient);
    let mut t = (1.0 / cur.gradient.iter().map(|g| g.abs()).sum::<f64>()).min(1.0);
    for _ in 0..60 {
        let e = f.eval(&axpy_new(x, t, &d))?;
        if e.value <= cur.value + opts.c1 * t * gtd && e.value < cur.value {
            let slope = dot(&e.gradient, &d);
            return Some(Probe { t, e, slope });
        }
        t *= 0.5;
    }
    None
}

/// Limited-memory BFGS from `x0`.
///
/// Returns the last iterate. `converged` is true iff the gradient's infinity
/// norm reached `grad_tol`.
pub fn lbfgs_minimize<F>(objective: F, x0: &[f64], opts: &OptimOptions) -> Result<OptimResult>
where
    F: FnMut(&[f64]) -> ObjectiveEval,
{
    let mut f = Counted {
        f: objective,
        evaluations: 0,
        blew_up: false,
    };
    let mut cur = start(&mut f, x0, opts)?;
    let mut x = x0.to_vec();
    let mut values = alloc::vec![cur.value];
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(opts.history);
    let mut iterations = 0;

    let finish =
        |x: Vec<f64>, cur: &ObjectiveEval, iterations, f: &Counted<F>, values| OptimResult {
            converged: !f.blew_up && inf_norm(&cur.gradient) <= opts.grad_tol,
            x,
            value: cur.value,
            iterations,
            evaluations: f.evaluations,
            values,
        };

    if inf_norm(&cur.gradient) <= opts.grad_tol {
        return Ok(finish(x, &cur, 0, &f, values));
    }

    while iterations < opts.max_iters {
        // two-loop recursion
        let mut q: Vec<f64> = cur.gradient.iter().map(|g| -g).collect();
        let mut alphas = Vec::with_capacity(history.len());
        for (s, y, rho) in history.iter().rev() {
            let a = rho * dot(s, &q);
            q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
            alphas.push(a);
        }
        if let Some((s, y, _)) = history.back() {
            let gamma = dot(s, y) / dot(y, y);
            q.iter_mut().for_each(|qi| *qi *= gamma);
        }
        for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
        }
        let mut d = q;
        if !(dot(&d, &cur.gradient) < 0.0) {
            history.clear();
            d = cur.gradient.iter().map(|g| -g).collect();
        }
        let t0 = if iterations == 0 {
            (1.0 / cur.gradient.iter().map(|g| g.abs()).sum::<f64>()).min(1.0)
        } else {
            1.0
        };

        let probe = match strong_wolfe(&mut f, &x, &cur, &d, t0, opts) {
            Search::Accepted(p) => p,
            Search::NonFinite => break,
            Search::Failed => {
                history.clear();
                match backtrack(&mut f, &x, &cur, opts) {
                    Some(p) => {
                        d = cur.gradient.iter().map(|g| -g).collect();
                        p
                    }
                    None => break,
                }
            }
        };

        let x_new = axpy_new(&x, probe.t, &d);
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = probe
            .e
            .gradient
            .iter()
            .zip(&cur.gradient)
            .map(|(a, b)| a - b)
            .collect();
        let sy = dot(&s, &y);
        if sy > 1e-10 * dot(&y, &y) {
            if history.len() == opts.history {
                history.pop_front();
            }
            history.push_back((s.clone(), y, 1.0 / sy));
        }
        let f_change = (cur.value - probe.e.value).abs();
        x = x_new;
        cur = probe.e;
        values.push(cur.value);
        iterations += 1;

        if inf_norm(&cur.gradient) <= opts.grad_tol {
            break;
        }
        if inf_norm(&s) <= 1e-15 * (1.0 + inf_norm(&x))
            || f_change <= 1e-16 * (1.0 + cur.value.abs())
        {
            break;
        }
    }
    Ok(finish(x, &cur, iterations, &f, values))
}

/// Fixed-step gradient descent for up to `max_iters` steps.
///
/// Stops early on `grad_tol`, on a non-finite value, or after five
/// consecutive increases of the objective; the best iterate seen is returned
/// in the last two cases.
pub fn gd_minimize<F>(objective: F, x0: &[f64], opts: &OptimOptions) -> Result<OptimResult>
where
    F: FnMut(&[f64]) -> ObjectiveEval,
{
    const DIVERGENCE_STREAK: usize = 5;
    let mut f = Counted {
        f: objective,
        evaluations: 0,
        blew_up: false,
    };
    let mut cur = start(&mut f, x0, opts)?;
    let mut x = x0.to_vec();
    let mut values = alloc::vec![cur.value];
    let mut best = (x.clone(), cur.clone());
    let mut increases = 0;
    let mut iterations = 0;

    if inf_norm(&cur.gradient) <= opts.grad_tol {
        return Ok(OptimResult {
            x,
            value: cur.value,
            iterations: 0,
            converged: true,
            evaluations: f.evaluations,
            values,
        });
    }
    let mut diverged = false;
    while iterations < opts.max_iters {
        let x_new = axpy_new(&x, -opts.step_size, &cur.gradient);
        let Some(e) = f.eval(&x_new) else {
            diverged = true;
            break;
        };
        iterations += 1;
        increases = if e.value > cur.value {
            increases + 1
        } else {
            0
        };
        x = x_new;
        cur = e;
        values.push(cur.value);
        if cur.value < best.1.value {
            best = (x.clone(), cur.clone());
        }
        if inf_norm(&cur.gradient) <= opts.grad_tol {
            return Ok(OptimResult {
                x,
                value: cur.value,
                iterations,
                converged: true,
                evaluations: f.evaluations,
                values,
            });
        }
        if increases >= DIVERGENCE_STREAK {
            diverged = true;
            break;
        }
    }
    let (x, e) = if diverged { best } else { (x, cur) };
    Ok(OptimResult {
        converged: !diverged && inf_norm(&e.gradient) <= opts.grad_tol,
        x,
        value: e.value,
        iterations,
        evaluations: f.evaluations,
        values,
    })
}
