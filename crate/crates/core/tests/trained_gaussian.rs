//! Properties of a decoder trained on the 2-d Gaussian task. The model is
//! trained once and shared by every test in this file.

use std::sync::OnceLock;

use mds_core::contamination::contaminate_gaussian;
use mds_core::inference::{
    fit_bandwidth, train_decoder, DecoderEmbedding, LinearGaussianPosterior, PosteriorEngine,
};
use mds_core::kernels::{FeatureMap, MeanEmbedding};
use mds_core::linalg::{squared_distance, Matrix};
use mds_core::mds::{
    adapt, adapt_from, calibrate_threshold, query_robust_posterior, AdaptOptions, EmbeddingModel,
};
use mds_core::optimize::ObjectiveEval;
use mds_core::rng::{rng_from_seed, stream_rng};
use mds_core::simulators::{build_training_pool, GaussianTask, Task};
use mds_core::stats::median;
use mds_core::Result;
use rand_distr::{Distribution, StandardNormal};

const ALPHA: f64 = 0.05;
const K: usize = 512;

struct Trained {
    task: Task,
    decoder: DecoderEmbedding,
    engine: PosteriorEngine,
}

fn trained() -> &'static Trained {
    static MODEL: OnceLock<Trained> = OnceLock::new();
    MODEL.get_or_init(|| {
        let task = Task::Gaussian(GaussianTask::default());
        let pool = build_training_pool(&task, 10_000, 5, false).unwrap();
        let bw = fit_bandwidth(&task, &pool, 200, &mut stream_rng(5, "bandwidth", 0)).unwrap();
        let fm = FeatureMap::build(2, K, bw, &mut stream_rng(5, "feature-map", 0)).unwrap();
        let mut rng = stream_rng(5, "decoder", 0);
        let fit = train_decoder(&task, &pool, fm, 0.1, &Default::default(), &mut rng).unwrap();
        let mut decoder = fit.decoder;
        calibrate_threshold(&mut decoder, &fit.holdout, ALPHA).unwrap();
        Trained {
            task,
            decoder,
            engine: PosteriorEngine::AnalyticGaussian(LinearGaussianPosterior::conjugate_gaussian(
                2, 100,
            )),
        }
    })
}

/// E[z̄ | x̄ = s]: each row given the sample mean is N(s, (N−1)/N · I), and
/// E cos(w·x + b) = cos(w·s + b) exp(−½ wᵀΣw).
fn conditional_embedding(fm: &FeatureMap, s: &[f64], var: f64) -> Vec<f64> {
    let w = fm.frequencies();
    let b = fm.offsets();
    let scale = (2.0 / fm.feature_dim() as f64).sqrt();
    (0..fm.feature_dim())
        .map(|k| {
            let row = w.row(k);
            let phase: f64 = row.iter().zip(s).map(|(a, x)| a * x).sum::<f64>() + b[k];
            let norm2: f64 = row.iter().map(|a| a * a).sum();
            scale * phase.cos() * (-0.5 * var * norm2).exp()
        })
        .collect()
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    dot / (a.iter().map(|x| x * x).sum::<f64>().sqrt()
        * b.iter().map(|x| x * x).sum::<f64>().sqrt())
}

#[test]
fn decoder_matches_the_conditional_embedding() {
    let t = trained();
    for s in [[0.0, 0.0], [0.5, -0.5], [1.0, 1.0], [-1.0, 0.3], [1.5, 0.0]] {
        let pred = t.decoder.embed(&s).unwrap().values;
        let oracle = conditional_embedding(&t.decoder.feature_map, &s, 0.99);
        let c = cosine(&pred, &oracle);
        assert!(c >= 0.99, "s = {s:?}: cosine {c}");
    }
}

#[test]
fn decoder_outputs_stay_near_the_feature_range() {
    let t = trained();
    let bound = 1.5 * (2.0 / K as f64).sqrt();
    let (mut inside, mut total) = (0, 0);
    for i in 0..21 {
        for j in 0..21 {
            let s = [-2.0 + 0.2 * i as f64, -2.0 + 0.2 * j as f64];
            for v in t.decoder.embed(&s).unwrap().values {
                inside += usize::from(v.abs() <= bound);
                total += 1;
            }
        }
    }
    assert!(inside as f64 >= 0.99 * total as f64, "{inside} of {total}");
}

fn flag_rate(eps: f64, delta: f64, trials: u64, seed: u64) -> f64 {
    let t = trained();
    let opts = AdaptOptions::default();
    let mut flagged = 0;
    for i in 0..trials {
        let mut rng = rng_from_seed(seed + i);
        let theta = t.task.sample_prior(&mut rng);
        let clean = t.task.simulate(&theta, &mut rng).unwrap();
        let data = contaminate_gaussian(&clean, eps, delta, &mut rng)
            .unwrap()
            .data;
        let s0 = t.task.summary(&data).unwrap();
        let obs = t.decoder.feature_map.mean_embedding(&data).unwrap();
        let r = adapt_from(
            &t.decoder,
            &s0,
            &obs,
            &AdaptOptions {
                gate: true,
                ..opts.clone()
            },
        )
        .unwrap();
        flagged += usize::from(r.flagged);
    }
    flagged as f64 / trials as f64
}

#[test]
fn clean_false_positive_rate_is_near_alpha() {
    let rate = flag_rate(0.0, 0.0, 500, 100_000);
    assert!((ALPHA / 2.0..=2.0 * ALPHA).contains(&rate), "{rate}");
}

#[test]
fn heavy_contamination_is_flagged() {
    let rate = flag_rate(0.3, 3.0, 200, 200_000);
    assert!(rate >= 0.9, "{rate}");
}

struct Outcome {
    s_oracle: Vec<f64>,
    s0: Vec<f64>,
    s_star: Vec<f64>,
}

fn shifted_outcomes(count: u64) -> Vec<Outcome> {
    let t = trained();
    (0..count)
        .map(|i| {
            let mut rng = rng_from_seed(300_000 + i);
            let theta = t.task.sample_prior(&mut rng);
            let clean = t.task.simulate(&theta, &mut rng).unwrap();
            let data = contaminate_gaussian(&clean, 0.2, 8.0, &mut rng)
                .unwrap()
                .data;
            let r = adapt(&t.decoder, &t.task, &data, &AdaptOptions::default()).unwrap();
            Outcome {
                s_oracle: t.task.summary(&clean).unwrap(),
                s0: r.s_initial,
                s_star: r.s_star,
            }
        })
        .collect()
}

#[test]
fn far_outliers_are_undone() {
    let out = shifted_outcomes(50);
    let before = median(
        &out.iter()
            .map(|o| squared_distance(&o.s0, &o.s_oracle).sqrt())
            .collect::<Vec<_>>(),
    );
    let after = median(
        &out.iter()
            .map(|o| squared_distance(&o.s_star, &o.s_oracle).sqrt())
            .collect::<Vec<_>>(),
    );
    assert!(after <= 0.25 * before, "{after} vs {before}");
    let closer = out
        .iter()
        .filter(|o| squared_distance(&o.s_star, &o.s_oracle) < squared_distance(&o.s0, &o.s_oracle))
        .count();
    assert!(closer >= 45, "{closer}/50");
}

/// θ* inside the 95% region of N(m, I/(N+1)): (N+1)‖θ* − m‖² ≤ χ²₂(0.95) = −2 ln 0.05.
fn in_credible_region(engine: &PosteriorEngine, s: &[f64], theta: &[f64]) -> bool {
    let m = engine.mean(s).unwrap();
    101.0 * squared_distance(&m, theta) <= -2.0 * 0.05f64.ln()
}

#[test]
fn credible_region_hits_match_the_exact_model() {
    // exact N(s, I) embeddings bound what any decoder can achieve here
    let t = trained();
    let exact = GaussianShift(t.decoder.feature_map.clone());
    let opts = AdaptOptions {
        gate: false,
        ..Default::default()
    };
    let (mut learned, mut oracle, mut plain) = (0, 0, 0);
    for i in 0..200 {
        let mut rng = rng_from_seed(300_000 + i);
        let theta = t.task.sample_prior(&mut rng);
        let clean = t.task.simulate(&theta, &mut rng).unwrap();
        let data = contaminate_gaussian(&clean, 0.2, 8.0, &mut rng)
            .unwrap()
            .data;
        let r = adapt(&t.decoder, &t.task, &data, &opts).unwrap();
        learned += usize::from(in_credible_region(&t.engine, &r.s_star, &theta));
        plain += usize::from(in_credible_region(&t.engine, &r.s_initial, &theta));
        let e = adapt(&exact, &t.task, &data, &opts).unwrap();
        oracle += usize::from(in_credible_region(&t.engine, &e.s_star, &theta));
    }
    assert!(learned + 10 >= oracle, "learned {learned}, exact {oracle}");
    assert!(learned >= 2 * plain, "learned {learned}, plain {plain}");
    assert!(oracle >= 160, "{oracle}");
}

#[test]
fn statistic_vanishes_at_the_predicted_embedding() {
    let t = trained();
    let s0 = [0.3, -0.2];
    let obs = t.decoder.embed(&s0).unwrap();
    let (stat, flagged) = mds_core::mds::detect(&t.decoder, &s0, &obs).unwrap();
    assert_eq!(stat, 0.0);
    assert!(!flagged && t.decoder.threshold.unwrap() > 0.0);
}

#[test]
fn gate_objective_and_engine_contracts() {
    let t = trained();
    let engine_bytes = serde_json::to_vec(&t.engine).unwrap();
    for i in 0..40 {
        let mut rng = rng_from_seed(400_000 + i);
        let theta = t.task.sample_prior(&mut rng);
        let clean = t.task.simulate(&theta, &mut rng).unwrap();
        let eps = if i % 2 == 0 { 0.0 } else { 0.3 };
        let data = contaminate_gaussian(&clean, eps, 4.0, &mut rng)
            .unwrap()
            .data;
        let r = adapt(&t.decoder, &t.task, &data, &AdaptOptions::default()).unwrap();
        if !r.flagged {
            assert_eq!(r.s_star, r.s_initial);
            assert_eq!(r.iterations, 0);
        }
        assert!(r.objective_final <= r.objective_initial);
        let ungated = adapt(
            &t.decoder,
            &t.task,
            &data,
            &AdaptOptions {
                gate: false,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(ungated.detected && ungated.objective_final <= ungated.objective_initial);
        query_robust_posterior(&t.engine, &r, 50, &mut rng).unwrap();
    }
    assert_eq!(serde_json::to_vec(&t.engine).unwrap(), engine_bytes);
}

/// Exact embedding of N(s, I) data.
struct GaussianShift(FeatureMap);

impl EmbeddingModel for GaussianShift {
    fn summary_dim(&self) -> usize {
        self.0.input_dim()
    }
    fn feature_map(&self) -> &FeatureMap {
        &self.0
    }
    fn embed(&self, s: &[f64]) -> Result<Vec<f64>> {
        Ok(conditional_embedding(&self.0, s, 1.0))
    }
    fn objective(&self, s: &[f64], target: &[f64]) -> Result<ObjectiveEval> {
        let w = self.0.frequencies();
        let b = self.0.offsets();
        let scale = (2.0 / self.0.feature_dim() as f64).sqrt();
        let mut value = 0.0;
        let mut gradient = vec![0.0; s.len()];
        for k in 0..self.0.feature_dim() {
            let row = w.row(k);
            let phase: f64 = row.iter().zip(s).map(|(a, x)| a * x).sum::<f64>() + b[k];
            let damp = scale * (-0.5 * row.iter().map(|a| a * a).sum::<f64>()).exp();
            let r = damp * phase.cos() - target[k];
            value += r * r;
            for (g, a) in gradient.iter_mut().zip(row) {
                *g -= 2.0 * r * damp * phase.sin() * a;
            }
        }
        Ok(ObjectiveEval { value, gradient })
    }
    fn threshold(&self) -> Option<f64> {
        None
    }
}

#[test]
fn analytic_model_recovers_the_data_mean() {
    let fm = FeatureMap::build(2, 256, 1.0, &mut rng_from_seed(21)).unwrap();
    let model = GaussianShift(fm);
    let c = [0.8, -0.6];
    let mut rng = rng_from_seed(22);
    let rows: Vec<f64> = (0..2000 * 2)
        .map(|i| {
            let z: f64 = StandardNormal.sample(&mut rng);
            c[i % 2] + z
        })
        .collect();
    let data = Matrix::from_vec(2000, 2, rows).unwrap();
    let obs: MeanEmbedding = model.0.mean_embedding(&data).unwrap();
    let opts = AdaptOptions {
        gate: false,
        ..Default::default()
    };
    let r = adapt_from(&model, &[0.0, 0.0], &obs, &opts).unwrap();
    assert!(
        squared_distance(&r.s_star, &c).sqrt() < 0.1,
        "{:?}",
        r.s_star
    );

    let mut best = (f64::INFINITY, [0.0, 0.0]);
    for i in 0..=200 {
        for j in 0..=200 {
            let s = [-2.0 + 0.02 * i as f64, -2.0 + 0.02 * j as f64];
            let v = model.objective(&s, &obs.values).unwrap().value;
            if v < best.0 {
                best = (v, s);
            }
        }
    }
    assert!(
        squared_distance(&r.s_star, &best.1).sqrt() <= 0.02,
        "{:?} vs grid {:?}",
        r.s_star,
        best.1
    );
}
