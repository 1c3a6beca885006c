use mds_core::contamination::{
    contaminate_gaussian, contaminate_oup, contaminate_sir, ContaminationSpec,
};
use mds_core::inference::{LinearGaussianPosterior, PosteriorEngine};
use mds_core::linalg::Matrix;
use mds_core::rng::rng_from_seed;
use mds_core::simulators::{
    build_training_pool, gaussian_posterior, FactorTask, GaussianTask, OupTask, SirState, SirTask,
    Task,
};
use proptest::prelude::*;
use rand::seq::SliceRandom;

fn tasks() -> Vec<Task> {
    vec![
        Task::Gaussian(GaussianTask::new(2, 12).unwrap()),
        Task::Factor(FactorTask::new(5, 12, &mut rng_from_seed(3)).unwrap()),
        Task::Oup(OupTask {
            n: 12,
            ..Default::default()
        }),
        Task::Sir(SirTask {
            n: 6,
            days: 60,
            ..Default::default()
        }),
    ]
}

/// Posterior mean of one coordinate by trapezoid quadrature of
/// prior × likelihood for n unit-variance observations with mean `xbar`.
fn quadrature_mean(xbar: f64, n: usize) -> f64 {
    let (lo, hi, steps) = (-12.0, 12.0, 240_000);
    let h = (hi - lo) / steps as f64;
    let (mut z, mut m) = (0.0, 0.0);
    for k in 0..=steps {
        let t = lo + k as f64 * h;
        let w = if k == 0 || k == steps { 0.5 } else { 1.0 };
        let dens = (-0.5 * t * t - 0.5 * n as f64 * (t - xbar) * (t - xbar)).exp() * w;
        z += dens;
        m += dens * t;
    }
    m / z
}

#[test]
fn conjugate_mean_matches_quadrature_on_slices() {
    for (xbar, n) in [
        (0.0, 1),
        (2.0, 1),
        (-1.3, 7),
        (0.8, 100),
        (3.1, 1000),
        (-2.5, 50),
    ] {
        let (mean, _) = gaussian_posterior(&[xbar, 0.0], n);
        assert!(
            (mean[0] - quadrature_mean(xbar, n)).abs() < 1e-6,
            "x̄ = {xbar}, N = {n}"
        );
    }
}

#[test]
fn factor_posterior_mean_matches_grid_quadrature() {
    let task = FactorTask::new(5, 20, &mut rng_from_seed(8)).unwrap();
    let post = LinearGaussianPosterior::factor(&task).unwrap();
    let data = Task::Factor(task.clone())
        .simulate(&[0.7, -0.4], &mut rng_from_seed(9))
        .unwrap();
    let s = Task::Factor(task.clone()).summary(&data).unwrap();
    // log p(θ | x) = −½‖θ‖² − (N/2)‖A θ − x̄‖² + const, on a 2-d grid
    let a = task.projection();
    let xbar = data.column_means();
    let n = 20.0;
    let (lo, hi, steps) = (-3.0, 3.0, 1200);
    let h = (hi - lo) / steps as f64;
    let log_post = |t: [f64; 2]| {
        let mut r = 0.0;
        for i in 0..a.rows() {
            let e = a.get(i, 0) * t[0] + a.get(i, 1) * t[1] - xbar[i];
            r += e * e;
        }
        -0.5 * (t[0] * t[0] + t[1] * t[1]) - 0.5 * n * r
    };
    let peak = log_post(post.mean(&s).unwrap().try_into().unwrap());
    let (mut z, mut m0, mut m1) = (0.0, 0.0, 0.0);
    for i in 0..=steps {
        for j in 0..=steps {
            let t = [lo + i as f64 * h, lo + j as f64 * h];
            let w = (log_post(t) - peak).exp();
            z += w;
            m0 += w * t[0];
            m1 += w * t[1];
        }
    }
    let mean = post.mean(&s).unwrap();
    assert!((m0 / z - mean[0]).abs() < 1e-6 && (m1 / z - mean[1]).abs() < 1e-6);
}

#[test]
fn prior_predictive_summaries_centre_on_zero() {
    let task = Task::Gaussian(GaussianTask::default());
    let m = 5000;
    let pool = build_training_pool(&task, m, 21, false).unwrap();
    let band = 3.0 * ((1.0 + 1.0 / 100.0) / m as f64).sqrt();
    for mean in pool.summaries.column_means() {
        assert!(mean.abs() < band, "{mean} vs {band}");
    }
}

#[test]
fn full_oup_contamination_is_simulation_at_the_contaminant() {
    let task = OupTask {
        n: 20,
        ..Default::default()
    };
    let t = Task::Oup(task.clone());
    let (theta_c, sigma2_c) = ([-0.5, 1.0], 0.5);
    let reps = 300;
    let mut contaminated = Vec::new();
    let mut direct = Vec::new();
    for r in 0..reps {
        let clean = t.simulate(&[1.0, 0.0], &mut rng_from_seed(r)).unwrap();
        let c = contaminate_oup(
            &task,
            &clean,
            1.0,
            theta_c,
            sigma2_c,
            &mut rng_from_seed(10_000 + r),
        )
        .unwrap();
        assert_eq!(c.replaced.len(), 20);
        contaminated.push(t.summary(&c.data).unwrap());
        let d = task
            .simulate_with(&theta_c, sigma2_c, 20, &mut rng_from_seed(20_000 + r))
            .unwrap();
        direct.push(t.summary(&d).unwrap());
    }
    for j in 0..3 {
        let col = |v: &[Vec<f64>]| v.iter().map(|s| s[j]).collect::<Vec<_>>();
        let (a, b) = (col(&contaminated), col(&direct));
        let mean = |x: &[f64]| x.iter().sum::<f64>() / x.len() as f64;
        let var = |x: &[f64]| {
            let m = mean(x);
            x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() - 1) as f64
        };
        let se = ((var(&a) + var(&b)) / reps as f64).sqrt();
        assert!((mean(&a) - mean(&b)).abs() < 4.0 * se, "summary {j}");
    }
    assert!(!t.check_prior(&theta_c).is_ok());
}

#[test]
fn gaussian_replacement_fraction_matches_eps() {
    let data = Matrix::zeros(100, 2);
    for eps in [0.1, 0.2, 0.5] {
        let total: usize = (0..1000)
            .map(|s| {
                contaminate_gaussian(&data, eps, 3.0, &mut rng_from_seed(s))
                    .unwrap()
                    .replaced
                    .len()
            })
            .sum();
        let frac = total as f64 / 100_000.0;
        assert!((frac - eps).abs() <= 0.02, "{frac} vs {eps}");
    }
}

#[test]
fn engine_sample_of_one_is_reproducible() {
    let e = PosteriorEngine::AnalyticGaussian(LinearGaussianPosterior::conjugate_gaussian(2, 100));
    let a = e.sample(&[0.3, 0.1], 1, &mut rng_from_seed(4)).unwrap();
    let b = e.sample(&[0.3, 0.1], 1, &mut rng_from_seed(4)).unwrap();
    assert_eq!(a, b);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn summaries_ignore_row_order(seed in any::<u64>(), which in 0usize..4) {
        let task = &tasks()[which];
        let mut rng = rng_from_seed(seed);
        let theta = task.sample_prior(&mut rng);
        let data = task.simulate(&theta, &mut rng).unwrap();
        let mut order: Vec<usize> = (0..data.rows()).collect();
        order.shuffle(&mut rng);
        let rows: Vec<f64> = order.iter().flat_map(|&i| data.row(i).to_vec()).collect();
        let permuted = Matrix::from_vec(data.rows(), data.cols(), rows).unwrap();
        prop_assert_eq!(task.summary(&data).unwrap(), task.summary(&permuted).unwrap());
    }

    #[test]
    fn prior_draws_lie_in_the_support(seed in any::<u64>(), which in 0usize..4) {
        let task = &tasks()[which];
        let theta = task.sample_prior(&mut rng_from_seed(seed));
        prop_assert!(task.check_prior(&theta).is_ok());
        prop_assert_eq!(task.project_to_prior(&theta), theta);
    }

    #[test]
    fn simulators_are_seed_deterministic(seed in any::<u64>(), which in 0usize..4) {
        let task = &tasks()[which];
        let run = || {
            let mut rng = rng_from_seed(seed);
            let theta = task.sample_prior(&mut rng);
            task.simulate(&theta, &mut rng).unwrap()
        };
        prop_assert_eq!(run(), run());
    }

    #[test]
    fn noiseless_sir_conserves_mass(beta in 0.05f64..0.5, ratio in 0.05f64..0.95) {
        let task = SirTask { sigma: 0.0, eta: 0.0, ..Default::default() };
        let gamma = beta * ratio;
        let mut st: SirState = task.initial_state(beta, gamma);
        for _ in 0..2 * task.days {
            let next = task.step(st, beta, gamma, 0.0);
            let total = next.s + next.i + next.r;
            prop_assert!((total - 1.0).abs() <= 1e-6);
            st = next.clipped();
        }
    }

    #[test]
    fn weekend_shift_preserves_trajectory_totals(seed in any::<u64>(), eps in 0.0f64..=1.0) {
        let task = Task::Sir(SirTask { n: 5, ..Default::default() });
        let mut rng = rng_from_seed(seed);
        let theta = task.sample_prior(&mut rng);
        let data = task.simulate(&theta, &mut rng).unwrap();
        let c = contaminate_sir(&data, eps, 0.05, &mut rng).unwrap();
        for i in 0..data.rows() {
            let (a, b): (f64, f64) = (data.row(i).iter().sum(), c.data.row(i).iter().sum());
            prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
        }
    }

    #[test]
    fn zero_eps_is_identity_and_runs_are_seeded(seed in any::<u64>(), which in 0usize..4, eps in 0.0f64..0.6) {
        let task = &tasks()[which];
        let mut rng = rng_from_seed(seed);
        let theta = task.sample_prior(&mut rng);
        let data = task.simulate(&theta, &mut rng).unwrap();
        let zero = ContaminationSpec::for_task(task, 0.0, 3.0);
        prop_assert_eq!(&zero.apply(task, &data, &mut rng).unwrap().data, &data);
        let spec = ContaminationSpec::for_task(task, eps, 3.0);
        let a = spec.apply(task, &data, &mut rng_from_seed(seed ^ 1)).unwrap();
        let b = spec.apply(task, &data, &mut rng_from_seed(seed ^ 1)).unwrap();
        prop_assert_eq!(a, b);
    }
}
