//! Decoder mean embeddings μ_ω(s) and the posterior engines queried at a
//! summary.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::kernels::{median_heuristic_rows, FeatureMap, MeanEmbedding, DEFAULT_MAX_PAIRS};
use crate::linalg::{cholesky, cholesky_solve, dot, inverse_spd, Matrix};
use crate::nn::{BatchLoss, Mlp, MseLoss};
use crate::optimize::ObjectiveEval;
use crate::simulators::{FactorTask, Task, TrainingPool};
use crate::train::{fit, TrainOptions, TrainReport};

/// Per-coordinate affine map to zero mean and unit variance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    #[serde(with = "crate::serial::f64_vec")]
    pub mean: Vec<f64>,
    #[serde(with = "crate::serial::f64_vec")]
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Fits on the rows of `data`. Constant columns get unit scale.
    pub fn fit(data: &Matrix) -> Result<Self> {
        ensure!(data.rows() >= 1, "cannot standardize an empty matrix");
        let mean = data.column_means();
        let n = data.rows() as f64;
        let std = (0..data.cols())
            .map(|j| {
                let var = data
                    .row_iter()
                    .map(|r| (r[j] - mean[j]) * (r[j] - mean[j]))
                    .sum::<f64>()
                    / n;
                let sd = libm::sqrt(var);
                if sd > 1e-12 * (1.0 + mean[j].abs()) {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Standardizer { mean, std })
    }

    pub fn identity(dim: usize) -> Self {
        Standardizer {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn invert(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| v * s + m)
            .collect()
    }

    pub fn apply_rows(&self, data: &Matrix) -> Matrix {
        let mut out = data.clone();
        for i in 0..out.rows() {
            let z = self.apply(data.row(i));
            out.row_mut(i).copy_from_slice(&z);
        }
        out
    }
}

/// Kernel bandwidth from the median heuristic over the rows of the first
/// `max_datasets` pool datasets.
pub fn fit_bandwidth<R: Rng + ?Sized>(
    task: &Task,
    pool: &TrainingPool,
    max_datasets: usize,
    rng: &mut R,
) -> Result<f64> {
    let k = max_datasets.min(pool.len()).max(1);
    let data = (0..k)
        .map(|i| pool.dataset(task, i).map(|d| d.into_owned()))
        .collect::<Result<Vec<_>>>()?;
    let rows: Vec<&[f64]> = data.iter().flat_map(|m| m.row_iter()).collect();
    median_heuristic_rows(&rows, DEFAULT_MAX_PAIRS, rng)
}

/// Empirical mean embeddings of every pool dataset, one per row.
pub fn pool_embeddings(task: &Task, pool: &TrainingPool, fm: &FeatureMap) -> Result<Matrix> {
    let mut out = Matrix::zeros(pool.len(), fm.feature_dim());
    for i in 0..pool.len() {
        let data = pool.dataset(task, i)?;
        let e = fm.mean_embedding(&data)?;
        out.row_mut(i).copy_from_slice(&e.values);
    }
    Ok(out)
}

/// Summary/embedding pairs the decoder never saw during training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Holdout {
    pub summaries: Matrix,
    pub embeddings: Matrix,
}

impl Holdout {
    pub fn len(&self) -> usize {
        self.summaries.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Regression estimate of the conditional mean embedding s ↦ E[z(x) | s].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecoderEmbedding {
    pub feature_map: FeatureMap,
    pub regressor: Mlp,
    pub standardizer: Standardizer,
    /// Coordinate-wise range of the training summaries.
    #[serde(with = "crate::serial::f64_vec")]
    pub summary_low: Vec<f64>,
    #[serde(with = "crate::serial::f64_vec")]
    pub summary_high: Vec<f64>,
    #[serde(with = "crate::serial::opt_f64_bits")]
    pub threshold: Option<f64>,
}

impl DecoderEmbedding {
    pub fn new(
        feature_map: FeatureMap,
        regressor: Mlp,
        standardizer: Standardizer,
    ) -> Result<Self> {
        ensure!(
            regressor.output_dim() == feature_map.feature_dim(),
            "regressor outputs {} values, feature map has {}",
            regressor.output_dim(),
            feature_map.feature_dim()
        );
        ensure!(
            regressor.input_dim() == standardizer.dim(),
            "regressor input {} does not match standardizer {}",
            regressor.input_dim(),
            standardizer.dim()
        );
        ensure!(
            standardizer.std.iter().all(|s| *s > 0.0),
            "standardizer scales must be positive"
        );
        let d = standardizer.dim();
        Ok(DecoderEmbedding {
            feature_map,
            regressor,
            standardizer,
            summary_low: vec![f64::NEG_INFINITY; d],
            summary_high: vec![f64::INFINITY; d],
            threshold: None,
        })
    }

    pub fn summary_dim(&self) -> usize {
        self.standardizer.dim()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_map.feature_dim()
    }

    fn check_summary(&self, s: &[f64]) -> Result<()> {
        ensure!(
            s.len() == self.summary_dim(),
            "summary has length {}, decoder expects {}",
            s.len(),
            self.summary_dim()
        );
        Ok(())
    }

    pub fn embed(&self, s: &[f64]) -> Result<MeanEmbedding> {
        self.check_summary(s)?;
        let values = self.regressor.forward(&self.standardizer.apply(s))?;
        Ok(MeanEmbedding::new(values, 0))
    }

    /// `‖μ_ω(s) − target‖²` and its gradient in s.
    pub fn objective(&self, s: &[f64], target: &[f64]) -> Result<ObjectiveEval> {
        self.check_summary(s)?;
        ensure!(
            target.len() == self.feature_dim(),
            "target embedding has length {}, expected {}",
            target.len(),
            self.feature_dim()
        );
        let mut value = 0.0;
        let (_, dz) =
            self.regressor
                .forward_with_input_gradient(&self.standardizer.apply(s), |out| {
                    out.iter()
                        .zip(target)
                        .map(|(o, t)| {
                            value += (o - t) * (o - t);
                            2.0 * (o - t)
                        })
                        .collect()
                })?;
        let gradient = dz
            .iter()
            .zip(&self.standardizer.std)
            .map(|(g, sd)| g / sd)
            .collect();
        Ok(ObjectiveEval { value, gradient })
    }

    /// Clamps each coordinate of `s` to the training summary range.
    pub fn clip_to_training_range(&self, s: &[f64]) -> Vec<f64> {
        s.iter()
            .zip(self.summary_low.iter().zip(&self.summary_high))
            .map(|(v, (lo, hi))| v.max(*lo).min(*hi))
            .collect()
    }
}

fn column_range(m: &Matrix) -> (Vec<f64>, Vec<f64>) {
    let mut lo = vec![f64::INFINITY; m.cols()];
    let mut hi = vec![f64::NEG_INFINITY; m.cols()];
    for r in m.row_iter() {
        for j in 0..r.len() {
            lo[j] = lo[j].min(r[j]);
            hi[j] = hi[j].max(r[j]);
        }
    }
    (lo, hi)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderFit {
    pub decoder: DecoderEmbedding,
    pub holdout: Holdout,
    pub report: TrainReport,
}

/// Trains the decoder on precomputed per-dataset embeddings; a random
/// `holdout_frac` of the records is set aside for calibration.
pub fn train_decoder_from_embeddings<R: Rng + ?Sized>(
    summaries: &Matrix,
    embeddings: &Matrix,
    feature_map: FeatureMap,
    holdout_frac: f64,
    opts: &TrainOptions,
    rng: &mut R,
) -> Result<DecoderFit> {
    let m = summaries.rows();
    ensure!(
        m >= 20,
        "decoder training needs at least 20 records, got {}",
        m
    );
    ensure!(
        embeddings.rows() == m,
        "summaries and embeddings differ in length"
    );
    ensure!(
        embeddings.cols() == feature_map.feature_dim(),
        "embeddings have width {}, feature map has {}",
        embeddings.cols(),
        feature_map.feature_dim()
    );
    ensure!(
        holdout_frac > 0.0 && holdout_frac <= 0.5,
        "holdout_frac must lie in (0, 0.5], got {}",
        holdout_frac
    );
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(rng);
    let n_hold = (libm::round(holdout_frac * m as f64) as usize).max(1);
    let (hold_idx, train_idx) = order.split_at(n_hold);
    let train_s = summaries.select_rows(train_idx);
    let train_e = embeddings.select_rows(train_idx);

    let standardizer = Standardizer::fit(&train_s)?;
    let mut dims = vec![summaries.cols()];
    dims.extend_from_slice(&opts.hidden);
    dims.push(feature_map.feature_dim());
    let mut regressor = Mlp::init(&dims, rng)?;
    let report = fit(
        &mut regressor,
        &standardizer.apply_rows(&train_s),
        &train_e,
        &MseLoss,
        opts,
        rng,
    )?;
    let (lo, hi) = column_range(&train_s);
    let mut decoder = DecoderEmbedding::new(feature_map, regressor, standardizer)?;
    decoder.summary_low = lo;
    decoder.summary_high = hi;
    Ok(DecoderFit {
        decoder,
        holdout: Holdout {
            summaries: summaries.select_rows(hold_idx),
            embeddings: embeddings.select_rows(hold_idx),
        },
        report,
    })
}

pub fn train_decoder<R: Rng + ?Sized>(
    task: &Task,
    pool: &TrainingPool,
    feature_map: FeatureMap,
    holdout_frac: f64,
    opts: &TrainOptions,
    rng: &mut R,
) -> Result<DecoderFit> {
    let embeddings = pool_embeddings(task, pool, &feature_map)?;
    train_decoder_from_embeddings(
        &pool.summaries,
        &embeddings,
        feature_map,
        holdout_frac,
        opts,
        rng,
    )
}

/// Posterior N(B·s, Σ): exact for linear-Gaussian models with a linear
/// sufficient summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearGaussianPosterior {
    pub gain: Matrix,
    pub covariance: Matrix,
}

impl LinearGaussianPosterior {
    pub fn new(gain: Matrix, covariance: Matrix) -> Result<Self> {
        ensure!(
            covariance.rows() == covariance.cols() && covariance.rows() == gain.rows(),
            "covariance must be square and match the gain rows"
        );
        cholesky(&covariance)?;
        Ok(LinearGaussianPosterior { gain, covariance })
    }

    /// Conjugate posterior for θ ~ N(0, I), x_i ~ N(θ, I) given the sample
    /// mean of `n` observations.
    pub fn conjugate_gaussian(dim: usize, n: usize) -> Self {
        let n = n as f64;
        let mut gain = Matrix::identity(dim);
        let mut cov = Matrix::identity(dim);
        for i in 0..dim {
            gain.set(i, i, n / (n + 1.0));
            cov.set(i, i, 1.0 / (n + 1.0));
        }
        LinearGaussianPosterior {
            gain,
            covariance: cov,
        }
    }

    /// Factor model x_i ~ N(Aθ, I) with summary A⁺x̄: precision I + n AᵀA,
    /// mean Σ · n AᵀA · s.
    pub fn factor(task: &FactorTask) -> Result<Self> {
        let a = task.projection();
        let n = task.n as f64;
        let mut ata = a.transpose().matmul(a)?;
        ata.as_mut_slice().iter_mut().for_each(|v| *v *= n);
        let mut precision = ata.clone();
        for i in 0..precision.rows() {
            precision.set(i, i, precision.get(i, i) + 1.0);
        }
        let covariance = inverse_spd(&precision)?;
        let gain = covariance.matmul(&ata)?;
        Self::new(gain, covariance)
    }

    pub fn mean(&self, s: &[f64]) -> Result<Vec<f64>> {
        self.gain.matvec(s)
    }
}

const LOG_STD_MIN: f64 = -7.0;
const LOG_STD_MAX: f64 = 3.0;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Network output layout: C logits, C·d means, C·d log-stddevs (component
/// major), all in standardized θ space.
#[derive(Clone, Copy, Debug, PartialEq)]
struct MixtureLayout {
    components: usize,
    dim: usize,
}

impl MixtureLayout {
    fn width(&self) -> usize {
        self.components * (1 + 2 * self.dim)
    }

    fn mean_at(&self, c: usize, j: usize) -> usize {
        self.components + c * self.dim + j
    }

    fn log_std_at(&self, c: usize, j: usize) -> usize {
        self.components + self.components * self.dim + c * self.dim + j
    }

    fn log_weights(&self, out: &[f64]) -> Vec<f64> {
        let logits = &out[..self.components];
        let mx = logits.iter().fold(f64::NEG_INFINITY, |a, b| a.max(*b));
        let lse = mx + libm::log(logits.iter().map(|l| libm::exp(l - mx)).sum::<f64>());
        logits.iter().map(|l| l - lse).collect()
    }

    fn log_std(&self, out: &[f64], c: usize, j: usize) -> f64 {
        out[self.log_std_at(c, j)].clamp(LOG_STD_MIN, LOG_STD_MAX)
    }

    /// Per-component joint log-likelihood of `t` (standardized).
    fn component_log_probs(&self, out: &[f64], t: &[f64]) -> Vec<f64> {
        let lw = self.log_weights(out);
        (0..self.components)
            .map(|c| {
                lw[c]
                    + (0..self.dim)
                        .map(|j| {
                            let ls = self.log_std(out, c, j);
                            let z = (t[j] - out[self.mean_at(c, j)]) * libm::exp(-ls);
                            -0.5 * z * z - ls - 0.5 * LN_2PI
                        })
                        .sum::<f64>()
            })
            .collect()
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let mx = v.iter().fold(f64::NEG_INFINITY, |a, b| a.max(*b));
    if !mx.is_finite() {
        return mx;
    }
    mx + libm::log(v.iter().map(|x| libm::exp(x - mx)).sum::<f64>())
}

/// Mean negative log-likelihood of a diagonal Gaussian mixture.
struct MixtureNll(MixtureLayout);

impl BatchLoss for MixtureNll {
    fn loss_and_gradient(&self, outputs: &Matrix, targets: &Matrix) -> (f64, Matrix) {
        let lay = self.0;
        let b = outputs.rows() as f64;
        let mut grad = Matrix::zeros(outputs.rows(), outputs.cols());
        let mut total = 0.0;
        for i in 0..outputs.rows() {
            let out = outputs.row(i);
            let t = targets.row(i);
            let lp = lay.component_log_probs(out, t);
            let lse = log_sum_exp(&lp);
            total -= lse;
            let lw = lay.log_weights(out);
            let g = grad.row_mut(i);
            for c in 0..lay.components {
                let resp = libm::exp(lp[c] - lse);
                g[c] = (libm::exp(lw[c]) - resp) / b;
                for j in 0..lay.dim {
                    let raw = out[lay.log_std_at(c, j)];
                    let ls = raw.clamp(LOG_STD_MIN, LOG_STD_MAX);
                    let inv_sd = libm::exp(-ls);
                    let z = (t[j] - out[lay.mean_at(c, j)]) * inv_sd;
                    g[lay.mean_at(c, j)] = -resp * z * inv_sd / b;
                    g[lay.log_std_at(c, j)] = if (LOG_STD_MIN..=LOG_STD_MAX).contains(&raw) {
                        -resp * (z * z - 1.0) / b
                    } else {
                        0.0
                    };
                }
            }
        }
        (total / b, grad)
    }
}

/// Mixture density network q(θ | s) with diagonal Gaussian components.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MdnPosterior {
    pub net: Mlp,
    pub components: usize,
    pub summary_standardizer: Standardizer,
    pub theta_standardizer: Standardizer,
}

/// Component weights, means and stddevs at one summary, in θ units.
#[derive(Clone, Debug, PartialEq)]
pub struct Mixture {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub stds: Vec<Vec<f64>>,
}

impl MdnPosterior {
    fn layout(&self) -> MixtureLayout {
        MixtureLayout {
            components: self.components,
            dim: self.theta_standardizer.dim(),
        }
    }

    pub fn mixture(&self, s: &[f64]) -> Result<Mixture> {
        let lay = self.layout();
        let out = self.net.forward(&self.summary_standardizer.apply(s))?;
        let ts = &self.theta_standardizer;
        let weights = lay.log_weights(&out).into_iter().map(libm::exp).collect();
        let means = (0..lay.components)
            .map(|c| {
                ts.invert(
                    &(0..lay.dim)
                        .map(|j| out[lay.mean_at(c, j)])
                        .collect::<Vec<_>>(),
                )
            })
            .collect();
        let stds = (0..lay.components)
            .map(|c| {
                (0..lay.dim)
                    .map(|j| libm::exp(lay.log_std(&out, c, j)) * ts.std[j])
                    .collect()
            })
            .collect();
        Ok(Mixture {
            weights,
            means,
            stds,
        })
    }

    pub fn log_density(&self, s: &[f64], theta: &[f64]) -> Result<f64> {
        ensure!(theta.len() == self.layout().dim, "θ has the wrong length");
        let out = self.net.forward(&self.summary_standardizer.apply(s))?;
        let t = self.theta_standardizer.apply(theta);
        let jac: f64 = self
            .theta_standardizer
            .std
            .iter()
            .map(|v| libm::log(*v))
            .sum();
        Ok(log_sum_exp(&self.layout().component_log_probs(&out, &t)) - jac)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum PosteriorEngine {
    AnalyticGaussian(LinearGaussianPosterior),
    Mdn(MdnPosterior),
}

impl PosteriorEngine {
    pub fn theta_dim(&self) -> usize {
        match self {
            PosteriorEngine::AnalyticGaussian(p) => p.gain.rows(),
            PosteriorEngine::Mdn(m) => m.theta_standardizer.dim(),
        }
    }

    pub fn summary_dim(&self) -> usize {
        match self {
            PosteriorEngine::AnalyticGaussian(p) => p.gain.cols(),
            PosteriorEngine::Mdn(m) => m.summary_standardizer.dim(),
        }
    }

    fn check_summary(&self, s: &[f64]) -> Result<()> {
        ensure!(
            s.len() == self.summary_dim(),
            "summary has length {}, engine expects {}",
            s.len(),
            self.summary_dim()
        );
        Ok(())
    }

    pub fn mean(&self, s: &[f64]) -> Result<Vec<f64>> {
        self.check_summary(s)?;
        match self {
            PosteriorEngine::AnalyticGaussian(p) => p.mean(s),
            PosteriorEngine::Mdn(m) => {
                let mix = m.mixture(s)?;
                let mut mean = vec![0.0; self.theta_dim()];
                for (w, mu) in mix.weights.iter().zip(&mix.means) {
                    mean.iter_mut().zip(mu).for_each(|(a, b)| *a += w * b);
                }
                Ok(mean)
            }
        }
    }

    pub fn log_density(&self, s: &[f64], theta: &[f64]) -> Result<f64> {
        self.check_summary(s)?;
        match self {
            PosteriorEngine::AnalyticGaussian(p) => {
                ensure!(theta.len() == p.gain.rows(), "θ has the wrong length");
                let l = cholesky(&p.covariance)?;
                let diff: Vec<f64> = theta.iter().zip(p.mean(s)?).map(|(a, b)| a - b).collect();
                let sol = cholesky_solve(&l, &diff);
                let logdet: f64 = (0..l.rows()).map(|i| 2.0 * libm::log(l.get(i, i))).sum();
                let d = theta.len() as f64;
                Ok(-0.5 * (dot(&diff, &sol) + logdet + d * LN_2PI))
            }
            PosteriorEngine::Mdn(m) => m.log_density(s, theta),
        }
    }

    /// `n` independent draws, one per row.
    pub fn sample<R: Rng + ?Sized>(&self, s: &[f64], n: usize, rng: &mut R) -> Result<Matrix> {
        self.check_summary(s)?;
        ensure!(n >= 1, "need at least one sample");
        let d = self.theta_dim();
        let mut out = Matrix::zeros(n, d);
        match self {
            PosteriorEngine::AnalyticGaussian(p) => {
                let mean = p.mean(s)?;
                let l = cholesky(&p.covariance)?;
                for i in 0..n {
                    let z: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
                    let row = out.row_mut(i);
                    for r in 0..d {
                        row[r] = mean[r] + (0..=r).map(|c| l.get(r, c) * z[c]).sum::<f64>();
                    }
                }
            }
            PosteriorEngine::Mdn(m) => {
                let mix = m.mixture(s)?;
                for i in 0..n {
                    let u: f64 = rng.random();
                    let mut c = 0;
                    let mut acc = mix.weights[0];
                    while u >= acc && c + 1 < mix.weights.len() {
                        c += 1;
                        acc += mix.weights[c];
                    }
                    let row = out.row_mut(i);
                    for j in 0..d {
                        let z: f64 = rng.sample(StandardNormal);
                        row[j] = mix.means[c][j] + mix.stds[c][j] * z;
                    }
                }
            }
        }
        Ok(out)
    }
}

/// KL(q(· | s_a) ‖ q(· | s_b)) for two analytic engines.
pub fn posterior_kl_analytic(
    a: &PosteriorEngine,
    b: &PosteriorEngine,
    s_a: &[f64],
    s_b: &[f64],
) -> Result<f64> {
    let (PosteriorEngine::AnalyticGaussian(pa), PosteriorEngine::AnalyticGaussian(pb)) = (a, b)
    else {
        return Err(Error::Unsupported(
            "closed-form KL needs analytic Gaussian engines".into(),
        ));
    };
    ensure!(
        pa.gain.rows() == pb.gain.rows(),
        "engines have different θ dimensions"
    );
    a.check_summary(s_a)?;
    b.check_summary(s_b)?;
    let d = pa.gain.rows();
    let lb = cholesky(&pb.covariance)?;
    let la = cholesky(&pa.covariance)?;
    let mut trace = 0.0;
    for j in 0..d {
        let col: Vec<f64> = (0..d).map(|i| pa.covariance.get(i, j)).collect();
        trace += cholesky_solve(&lb, &col)[j];
    }
    let diff: Vec<f64> = pb
        .mean(s_b)?
        .iter()
        .zip(pa.mean(s_a)?)
        .map(|(x, y)| x - y)
        .collect();
    let maha = dot(&diff, &cholesky_solve(&lb, &diff));
    let logdet = |l: &Matrix| (0..d).map(|i| 2.0 * libm::log(l.get(i, i))).sum::<f64>();
    let kl = 0.5 * (trace + maha - d as f64 + logdet(&lb) - logdet(&la));
    Ok(kl.max(0.0))
}

/// Default MDN training options: same optimizer settings as the decoder,
/// narrower network.
pub fn mdn_train_options() -> TrainOptions {
    TrainOptions {
        hidden: vec![128, 128],
        ..TrainOptions::default()
    }
}

/// Fits an MDN posterior by maximum likelihood on (summary, θ) pairs.
pub fn train_mdn<R: Rng + ?Sized>(
    summaries: &Matrix,
    thetas: &Matrix,
    components: usize,
    opts: &TrainOptions,
    rng: &mut R,
) -> Result<(PosteriorEngine, TrainReport)> {
    ensure!(
        summaries.rows() == thetas.rows(),
        "summaries and θ differ in length"
    );
    ensure!(
        summaries.rows() >= 100,
        "MDN training needs at least 100 records, got {}",
        summaries.rows()
    );
    ensure!(components >= 1, "need at least one mixture component");
    let summary_standardizer = Standardizer::fit(summaries)?;
    let theta_standardizer = Standardizer::fit(thetas)?;
    let layout = MixtureLayout {
        components,
        dim: thetas.cols(),
    };
    let mut dims = vec![summaries.cols()];
    dims.extend_from_slice(&opts.hidden);
    dims.push(layout.width());
    let mut net = Mlp::init(&dims, rng)?;
    let report = fit(
        &mut net,
        &summary_standardizer.apply_rows(summaries),
        &theta_standardizer.apply_rows(thetas),
        &MixtureNll(layout),
        opts,
        rng,
    )?;
    Ok((
        PosteriorEngine::Mdn(MdnPosterior {
            net,
            components,
            summary_standardizer,
            theta_standardizer,
        }),
        report,
    ))
}
