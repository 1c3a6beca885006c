//! Test-time minimum distance summaries: detect a mismatch between the
//! observed data and the decoder's prediction at the observed summary, and
//! if there is one, move the summary to where the decoder best explains the
//! data.

use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::inference::{DecoderEmbedding, Holdout, PosteriorEngine};
use crate::kernels::{FeatureMap, MeanEmbedding};
use crate::linalg::{squared_distance, Matrix};
use crate::optimize::{gd_minimize, lbfgs_minimize, ObjectiveEval, OptimOptions, OptimResult};
use crate::simulators::Task;
use crate::stats::quantile;

/// A model of s ↦ μ(s), the kernel mean embedding of data with summary s.
pub trait EmbeddingModel {
    fn summary_dim(&self) -> usize;
    fn feature_map(&self) -> &FeatureMap;
    fn embed(&self, s: &[f64]) -> Result<Vec<f64>>;
    /// `‖μ(s) − target‖²` and its gradient in s.
    fn objective(&self, s: &[f64], target: &[f64]) -> Result<ObjectiveEval>;
    fn threshold(&self) -> Option<f64>;

    /// Where the optimizer starts for the observed summary `s0`.
    fn start_point(&self, s0: &[f64]) -> Vec<f64> {
        s0.to_vec()
    }
}

impl EmbeddingModel for DecoderEmbedding {
    fn summary_dim(&self) -> usize {
        DecoderEmbedding::summary_dim(self)
    }

    fn feature_map(&self) -> &FeatureMap {
        &self.feature_map
    }

    fn embed(&self, s: &[f64]) -> Result<Vec<f64>> {
        Ok(DecoderEmbedding::embed(self, s)?.values)
    }

    fn objective(&self, s: &[f64], target: &[f64]) -> Result<ObjectiveEval> {
        DecoderEmbedding::objective(self, s, target)
    }

    fn threshold(&self) -> Option<f64> {
        self.threshold
    }

    /// Far outside the training range the regressor saturates and its
    /// gradient vanishes, so the search starts from the nearest point of the
    /// training summary box.
    fn start_point(&self, s0: &[f64]) -> Vec<f64> {
        self.clip_to_training_range(s0)
    }
}

/// Null statistics `‖μ(s_i) − z̄_i‖²` over held-out records.
pub fn holdout_statistics<M: EmbeddingModel + ?Sized>(
    model: &M,
    holdout: &Holdout,
) -> Result<Vec<f64>> {
    (0..holdout.len())
        .map(|i| {
            let pred = model.embed(holdout.summaries.row(i))?;
            Ok(squared_distance(&pred, holdout.embeddings.row(i)))
        })
        .collect()
}

/// Sets τ to the (1 − α) quantile (type 7) of the held-out statistics.
pub fn calibrate_threshold(
    dec: &mut DecoderEmbedding,
    holdout: &Holdout,
    alpha: f64,
) -> Result<f64> {
    ensure!(
        holdout.len() >= 20,
        "calibration needs at least 20 held-out records, got {}",
        holdout.len()
    );
    ensure!(
        alpha > 0.0 && alpha < 0.5,
        "α must lie in (0, 0.5), got {}",
        alpha
    );
    let stats = holdout_statistics(dec, holdout)?;
    let tau = quantile(&stats, 1.0 - alpha);
    dec.threshold = Some(tau);
    Ok(tau)
}

/// Returns the statistic `‖μ(s0) − μ_obs‖²` and whether it exceeds τ.
pub fn detect<M: EmbeddingModel + ?Sized>(
    model: &M,
    s0: &[f64],
    obs: &MeanEmbedding,
) -> Result<(f64, bool)> {
    let tau = model
        .threshold()
        .ok_or_else(|| Error::InvalidState("detection threshold has not been calibrated".into()))?;
    let stat = squared_distance(&model.embed(s0)?, &obs.values);
    Ok((stat, stat > tau))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    #[default]
    Lbfgs,
    Sgd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptOptions {
    pub optimizer: Optimizer,
    /// Adapt only when the detection statistic exceeds τ.
    pub gate: bool,
    pub optim: OptimOptions,
}

impl Default for AdaptOptions {
    fn default() -> Self {
        AdaptOptions {
            optimizer: Optimizer::Lbfgs,
            gate: true,
            optim: OptimOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptationResult {
    pub s_initial: Vec<f64>,
    pub s_star: Vec<f64>,
    pub objective_initial: f64,
    pub objective_final: f64,
    /// Detection statistic at `s_initial` (equal to `objective_initial`).
    pub statistic: f64,
    pub threshold: Option<f64>,
    /// Statistic above τ; false when τ is unset.
    pub flagged: bool,
    /// Whether the optimization ran: flagged, or the gate is disabled.
    pub detected: bool,
    pub iterations: usize,
    pub converged: bool,
}

/// Adapts the summary of `observations` for `task`.
pub fn adapt<M: EmbeddingModel + ?Sized>(
    model: &M,
    task: &Task,
    observations: &Matrix,
    opts: &AdaptOptions,
) -> Result<AdaptationResult> {
    let s0 = task.summary(observations)?;
    let obs = model.feature_map().mean_embedding(observations)?;
    adapt_from(model, &s0, &obs, opts)
}

/// Adaptation from a precomputed summary and observed mean embedding.
pub fn adapt_from<M: EmbeddingModel + ?Sized>(
    model: &M,
    s0: &[f64],
    obs: &MeanEmbedding,
    opts: &AdaptOptions,
) -> Result<AdaptationResult> {
    ensure!(
        s0.len() == model.summary_dim(),
        "summary has length {}, model expects {}",
        s0.len(),
        model.summary_dim()
    );
    ensure!(
        s0.iter().all(|v| v.is_finite()),
        "observed summary is not finite"
    );
    let threshold = model.threshold();
    let statistic = squared_distance(&model.embed(s0)?, &obs.values);
    let flagged = threshold.is_some_and(|tau| statistic > tau);
    if opts.gate && threshold.is_none() {
        return Err(Error::InvalidState(
            "gated adaptation needs a calibrated threshold".into(),
        ));
    }
    let mut result = AdaptationResult {
        s_initial: s0.to_vec(),
        s_star: s0.to_vec(),
        objective_initial: statistic,
        objective_final: statistic,
        statistic,
        threshold,
        flagged,
        detected: flagged || !opts.gate,
        iterations: 0,
        converged: true,
    };
    if !result.detected {
        return Ok(result);
    }

    let target = &obs.values;
    let mut failure = None;
    let objective = |s: &[f64]| match model.objective(s, target) {
        Ok(e) => e,
        Err(e) => {
            failure.get_or_insert(e);
            ObjectiveEval {
                value: f64::NAN,
                gradient: alloc::vec![f64::NAN; s.len()],
            }
        }
    };
    let start = model.start_point(s0);
    let run: Result<OptimResult> = match opts.optimizer {
        Optimizer::Lbfgs => lbfgs_minimize(objective, &start, &opts.optim),
        Optimizer::Sgd => gd_minimize(objective, &start, &opts.optim),
    };
    if let Some(e) = failure {
        return Err(e);
    }
    match run {
        Ok(r) if r.value < statistic && r.x.iter().all(|v| v.is_finite()) => {
            result.s_star = r.x;
            result.objective_final = r.value;
            result.iterations = r.iterations;
            result.converged = r.converged;
        }
        Ok(r) => {
            result.iterations = r.iterations;
            result.converged = false;
        }
        // the start point itself was not evaluable
        Err(_) => result.converged = false,
    }
    Ok(result)
}

/// Posterior samples at the adapted summary. The engine is only read.
pub fn query_robust_posterior<R: Rng + ?Sized>(
    engine: &PosteriorEngine,
    result: &AdaptationResult,
    n: usize,
    rng: &mut R,
) -> Result<Matrix> {
    engine.sample(&result.s_star, n, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::{LinearGaussianPosterior, Standardizer};
    use crate::nn::Mlp;
    use crate::rng::rng_from_seed;
    use alloc::vec;

    /// μ(s) = z-embedding of a point mass at s.
    struct PointMass(FeatureMap, Option<f64>);

    impl EmbeddingModel for PointMass {
        fn summary_dim(&self) -> usize {
            self.0.input_dim()
        }
        fn feature_map(&self) -> &FeatureMap {
            &self.0
        }
        fn embed(&self, s: &[f64]) -> Result<Vec<f64>> {
            self.0.features(s)
        }
        fn objective(&self, s: &[f64], target: &[f64]) -> Result<ObjectiveEval> {
            let w = self.0.frequencies();
            let b = self.0.offsets();
            let scale = libm::sqrt(2.0 / self.0.feature_dim() as f64);
            let mut value = 0.0;
            let mut gradient = vec![0.0; s.len()];
            for k in 0..self.0.feature_dim() {
                let arg = crate::linalg::dot(w.row(k), s) + b[k];
                let r = scale * libm::cos(arg) - target[k];
                value += r * r;
                for j in 0..s.len() {
                    gradient[j] -= 2.0 * r * scale * libm::sin(arg) * w.get(k, j);
                }
            }
            Ok(ObjectiveEval { value, gradient })
        }
        fn threshold(&self) -> Option<f64> {
            self.1
        }
    }

    fn point_mass(tau: Option<f64>) -> PointMass {
        PointMass(
            FeatureMap::build(2, 256, 2.0, &mut rng_from_seed(3)).unwrap(),
            tau,
        )
    }

    #[test]
    fn calibration_on_constant_and_linear_statistics() {
        let fm = FeatureMap::build(1, 4, 1.0, &mut rng_from_seed(0)).unwrap();
        let mut dec = DecoderEmbedding::new(
            fm,
            Mlp::zeros(&[1, 3, 4]).unwrap(),
            Standardizer::identity(1),
        )
        .unwrap();
        // zero regressor: statistic is ‖z̄_i‖², set to i
        let n = 100;
        let summaries = Matrix::zeros(n, 1);
        let mut emb = Matrix::zeros(n, 4);
        for i in 0..n {
            emb.set(i, 0, libm::sqrt((i + 1) as f64));
        }
        let holdout = Holdout {
            summaries,
            embeddings: emb,
        };
        let tau = calibrate_threshold(&mut dec, &holdout, 0.05).unwrap();
        assert!((tau - 95.05).abs() < 1e-9);
        assert_eq!(dec.threshold, Some(tau));

        let mut constant = holdout.clone();
        for i in 0..n {
            constant.embeddings.set(i, 0, 2.0);
        }
        assert_eq!(calibrate_threshold(&mut dec, &constant, 0.05).unwrap(), 4.0);

        let small = Holdout {
            summaries: Matrix::zeros(10, 1),
            embeddings: Matrix::zeros(10, 4),
        };
        assert!(calibrate_threshold(&mut dec, &small, 0.05).is_err());
    }

    #[test]
    fn detect_requires_threshold() {
        let m = point_mass(None);
        let obs = MeanEmbedding::new(m.embed(&[0.0, 0.0]).unwrap(), 1);
        assert!(matches!(
            detect(&m, &[0.0, 0.0], &obs),
            Err(Error::InvalidState(_))
        ));
        let m = point_mass(Some(1e-3));
        assert_eq!(detect(&m, &[0.0, 0.0], &obs).unwrap(), (0.0, false));
    }

    #[test]
    fn unflagged_data_keeps_summary() {
        let m = point_mass(Some(1e-3));
        let s0 = [0.4, -0.1];
        let obs = MeanEmbedding::new(m.embed(&s0).unwrap(), 1);
        let r = adapt_from(&m, &s0, &obs, &AdaptOptions::default()).unwrap();
        assert!(!r.detected && !r.flagged);
        assert_eq!(r.s_star, s0.to_vec());
    }

    #[test]
    fn adaptation_recovers_point_mass_location() {
        let m = point_mass(Some(1e-6));
        let c = [0.7, -0.4];
        let obs = MeanEmbedding::new(m.embed(&c).unwrap(), 1);
        for optimizer in [Optimizer::Lbfgs, Optimizer::Sgd] {
            let opts = AdaptOptions {
                optimizer,
                optim: OptimOptions {
                    max_iters: 2000,
                    step_size: 0.5,
                    ..Default::default()
                },
                ..Default::default()
            };
            let r = adapt_from(&m, &[0.5, 0.0], &obs, &opts).unwrap();
            assert!(r.detected);
            assert!(r.objective_final <= r.objective_initial);
            for (a, b) in r.s_star.iter().zip(&c) {
                assert!((a - b).abs() < 1e-3, "{:?} {:?}", optimizer, r);
            }
        }
    }

    #[test]
    fn ungated_adaptation_without_threshold() {
        let m = point_mass(None);
        let obs = MeanEmbedding::new(m.embed(&[0.2, 0.2]).unwrap(), 1);
        let opts = AdaptOptions {
            gate: false,
            ..Default::default()
        };
        let r = adapt_from(&m, &[0.0, 0.0], &obs, &opts).unwrap();
        assert!(r.detected && !r.flagged);
        assert!(adapt_from(&m, &[0.0, 0.0], &obs, &AdaptOptions::default()).is_err());
    }

    #[test]
    fn robust_query_shifts_conjugate_mean() {
        let engine =
            PosteriorEngine::AnalyticGaussian(LinearGaussianPosterior::conjugate_gaussian(2, 100));
        let base = AdaptationResult {
            s_initial: vec![0.0, 0.0],
            s_star: vec![0.0, 0.0],
            objective_initial: 0.0,
            objective_final: 0.0,
            statistic: 0.0,
            threshold: Some(1.0),
            flagged: false,
            detected: false,
            iterations: 0,
            converged: true,
        };
        let shifted = AdaptationResult {
            s_star: vec![1.0, -2.0],
            ..base.clone()
        };
        let a = query_robust_posterior(&engine, &base, 5, &mut rng_from_seed(1)).unwrap();
        let b = query_robust_posterior(&engine, &shifted, 5, &mut rng_from_seed(1)).unwrap();
        let k = 100.0 / 101.0;
        for i in 0..5 {
            assert!((b.get(i, 0) - a.get(i, 0) - k).abs() < 1e-12);
            assert!((b.get(i, 1) - a.get(i, 1) + 2.0 * k).abs() < 1e-12);
        }
    }
}
