//! Mini-batch Adam training with early stopping.

use alloc::vec::Vec;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::linalg::Matrix;
use crate::nn::{AdamState, BatchLoss, Mlp};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainOptions {
    /// Hidden layer widths.
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Fraction of the training rows held out for early stopping.
    pub validation_frac: f64,
    /// An epoch only counts as an improvement when the validation loss drops
    /// below `best * (1 - min_rel_improvement)`.
    pub min_rel_improvement: f64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            hidden: alloc::vec![256, 256],
            learning_rate: 5e-4,
            batch_size: 128,
            max_epochs: 500,
            patience: 20,
            validation_frac: 0.1,
            min_rel_improvement: 1e-4,
        }
    }
}

impl TrainOptions {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.learning_rate > 0.0, "learning rate must be positive");
        ensure!(self.batch_size >= 1, "batch size must be at least 1");
        ensure!(self.max_epochs >= 1, "max_epochs must be at least 1");
        ensure!(
            (0.0..0.9).contains(&self.validation_frac),
            "validation_frac must lie in [0, 0.9)"
        );
        ensure!(
            self.hidden.iter().all(|&h| h > 0),
            "hidden widths must be positive"
        );
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub train_losses: Vec<f64>,
    pub validation_losses: Vec<f64>,
    /// Per-step mini-batch losses, in order.
    pub step_losses: Vec<f64>,
}

impl TrainReport {
    pub fn best_validation_loss(&self) -> Option<f64> {
        self.validation_losses.get(self.best_epoch).copied()
    }
}

fn eval_loss<L: BatchLoss>(mlp: &Mlp, x: &Matrix, t: &Matrix, loss: &L) -> Result<f64> {
    const CHUNK: usize = 1024;
    let mut total = 0.0;
    let mut start = 0;
    let idx: Vec<usize> = (0..x.rows()).collect();
    while start < x.rows() {
        let end = (start + CHUNK).min(x.rows());
        let xs = x.select_rows(&idx[start..end]);
        let ts = t.select_rows(&idx[start..end]);
        let out = mlp.forward_batch(&xs)?;
        total += loss.loss(&out, &ts) * (end - start) as f64;
        start = end;
    }
    Ok(total / x.rows() as f64)
}

/// Trains `mlp` in place and restores the parameters with the best
/// validation loss.
pub fn fit<L: BatchLoss, R: Rng + ?Sized>(
    mlp: &mut Mlp,
    inputs: &Matrix,
    targets: &Matrix,
    loss: &L,
    opts: &TrainOptions,
    rng: &mut R,
) -> Result<TrainReport> {
    opts.validate()?;
    ensure!(
        inputs.rows() == targets.rows(),
        "{} inputs but {} targets",
        inputs.rows(),
        targets.rows()
    );
    ensure!(inputs.rows() >= 2, "need at least two training rows");
    ensure!(inputs.cols() == mlp.input_dim(), "input width mismatch");

    let mut order: Vec<usize> = (0..inputs.rows()).collect();
    order.shuffle(rng);
    let n_val = if opts.validation_frac > 0.0 {
        ((inputs.rows() as f64 * opts.validation_frac) as usize).max(1)
    } else {
        0
    };
    let (val_idx, train_idx) = order.split_at(n_val);
    let mut train_idx = train_idx.to_vec();
    let (val_x, val_t) = (inputs.select_rows(val_idx), targets.select_rows(val_idx));

    let mut adam = AdamState::new(mlp, opts.learning_rate);
    let mut report = TrainReport::default();
    let mut best = (f64::INFINITY, mlp.clone());
    let mut since_best = 0;

    for epoch in 0..opts.max_epochs {
        train_idx.shuffle(rng);
        let mut epoch_loss = 0.0;
        for batch in train_idx.chunks(opts.batch_size) {
            let bx = inputs.select_rows(batch);
            let bt = targets.select_rows(batch);
            let trace = mlp.forward_trace(&bx)?;
            let (l, d_out) = loss.loss_and_gradient(trace.output(), &bt);
            if !l.is_finite() {
                return Err(Error::Numerical(alloc::format!(
                    "non-finite training loss at epoch {epoch}"
                )));
            }
            let (grads, _) = mlp.backward(&trace, &d_out)?;
            adam.step(mlp, &grads)?;
            epoch_loss += l * batch.len() as f64;
            report.step_losses.push(l);
        }
        report
            .train_losses
            .push(epoch_loss / train_idx.len() as f64);
        report.epochs_run = epoch + 1;

        if n_val == 0 {
            report.validation_losses.push(report.train_losses[epoch]);
            report.best_epoch = epoch;
            best.0 = report.train_losses[epoch];
            continue;
        }
        let v = eval_loss(mlp, &val_x, &val_t, loss)?;
        if !v.is_finite() {
            return Err(Error::Numerical(alloc::format!(
                "non-finite validation loss at epoch {epoch}"
            )));
        }
        report.validation_losses.push(v);
        let threshold = if best.0.is_finite() {
            best.0 - opts.min_rel_improvement * best.0.abs()
        } else {
            f64::INFINITY
        };
        if v < threshold {
            best = (v, mlp.clone());
            report.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= opts.patience {
                break;
            }
        }
    }
    if n_val > 0 {
        *mlp = best.1;
    }
    Ok(report)
}
