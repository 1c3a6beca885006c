use mds_core::kernels::{
    median_heuristic, mmd2_exact, mmd2_rff, rbf, FeatureMap, DEFAULT_MAX_PAIRS,
};
use mds_core::linalg::Matrix;
use mds_core::rng::rng_from_seed;
use mds_core::stats::median;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

fn normal_sample(n: usize, d: usize, mean: f64, rng: &mut impl Rng) -> Matrix {
    Matrix::from_vec(
        n,
        d,
        (0..n * d)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut *rng);
                mean + z
            })
            .collect(),
    )
    .unwrap()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[test]
fn single_frequency_magnitude_is_half_normal() {
    let ell = 2.0;
    let n = 100_000;
    let mean: f64 = (0..n)
        .map(|s| {
            let fm = FeatureMap::build(1, 1, ell, &mut rng_from_seed(s)).unwrap();
            fm.frequencies().get(0, 0).abs()
        })
        .sum::<f64>()
        / n as f64;
    let expected = (2.0 / std::f64::consts::PI).sqrt() / ell;
    // sd of |W| is sqrt(1 - 2/pi)/ell
    let se = (1.0 - 2.0 / std::f64::consts::PI).sqrt() / ell / (n as f64).sqrt();
    assert!((mean - expected).abs() < 4.0 * se, "{mean} vs {expected}");
}

#[test]
fn feature_inner_products_estimate_the_rbf_kernel() {
    let x = [0.3, -0.7];
    let y = [1.1, 0.4];
    let ell = 1.3;
    let exact = rbf(&x, &y, ell);
    let draws: Vec<f64> = (0..50)
        .map(|s| {
            let fm = FeatureMap::build(2, 512, ell, &mut rng_from_seed(1000 + s)).unwrap();
            dot(&fm.features(&x).unwrap(), &fm.features(&y).unwrap())
        })
        .collect();
    let mean = draws.iter().sum::<f64>() / 50.0;
    let var = draws.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / 49.0;
    let se = (var / 50.0).sqrt();
    assert!(
        (mean - exact).abs() <= 3.0 * se,
        "{mean} vs {exact} (se {se})"
    );

    for s in 0..20 {
        let fm = FeatureMap::build(2, 512, ell, &mut rng_from_seed(s)).unwrap();
        let z = fm.features(&x).unwrap();
        assert!((dot(&z, &z) - 1.0).abs() < 0.1);
    }
}

#[test]
fn embedding_of_one_row_is_its_features() {
    let fm = FeatureMap::build(3, 64, 0.8, &mut rng_from_seed(1)).unwrap();
    let row = [0.5, -1.0, 2.0];
    let data = Matrix::from_rows(&[row]).unwrap();
    assert_eq!(
        fm.mean_embedding(&data).unwrap().values,
        fm.features(&row).unwrap()
    );
}

#[test]
fn separated_samples_have_larger_exact_mmd() {
    let mut wins = 0;
    for s in 0..100 {
        let mut rng = rng_from_seed(s);
        let a = normal_sample(200, 1, 0.0, &mut rng);
        let b = normal_sample(200, 1, 3.0, &mut rng);
        let c = normal_sample(200, 1, 0.0, &mut rng);
        let mut pooled = a.as_slice().to_vec();
        pooled.extend_from_slice(b.as_slice());
        let ell = median_heuristic(
            &Matrix::from_vec(400, 1, pooled).unwrap(),
            DEFAULT_MAX_PAIRS,
            &mut rng,
        )
        .unwrap();
        let far = mmd2_exact(ell, &a, &b).unwrap();
        let near = mmd2_exact(ell, &a, &c).unwrap();
        assert!(far > 0.0 && far <= 2.0);
        if far > near {
            wins += 1;
        }
    }
    assert!(wins >= 95, "{wins}");
}

fn rff_error(k: usize, seed: u64, a: &Matrix, b: &Matrix, ell: f64) -> f64 {
    let fm = FeatureMap::build(2, k, ell, &mut rng_from_seed(seed)).unwrap();
    let rff = mmd2_rff(
        &fm.mean_embedding(a).unwrap(),
        &fm.mean_embedding(b).unwrap(),
    )
    .unwrap();
    (rff - mmd2_exact(ell, a, b).unwrap()).abs()
}

#[test]
fn rff_mmd_tracks_exact_mmd_at_512_features() {
    let mut rng = rng_from_seed(77);
    let a = normal_sample(200, 2, 0.0, &mut rng);
    let b = normal_sample(200, 2, 1.0, &mut rng);
    let ell = 1.5;
    let mean_err: f64 = (0..20).map(|s| rff_error(512, s, &a, &b, ell)).sum::<f64>() / 20.0;
    assert!(mean_err <= 0.05, "{mean_err}");
}

#[test]
fn rff_error_shrinks_as_features_double() {
    let mut rng = rng_from_seed(78);
    let a = normal_sample(200, 2, 0.0, &mut rng);
    let b = normal_sample(200, 2, 1.0, &mut rng);
    let med = |k: usize| {
        median(
            &(0..41)
                .map(|s| rff_error(k, s, &a, &b, 1.5))
                .collect::<Vec<_>>(),
        )
    };
    let (e32, e128, e512) = (med(32), med(128), med(512));
    assert!(e32 > e128 && e128 > e512, "{e32} {e128} {e512}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn both_estimators_are_symmetric_and_non_negative(
        seed in any::<u64>(),
        n in 1usize..30,
        m in 1usize..30,
        shift in -3.0f64..3.0,
        ell in 0.1f64..5.0,
    ) {
        let mut rng = rng_from_seed(seed);
        let a = normal_sample(n, 2, 0.0, &mut rng);
        let b = normal_sample(m, 2, shift, &mut rng);
        let ab = mmd2_exact(ell, &a, &b).unwrap();
        prop_assert_eq!(ab, mmd2_exact(ell, &b, &a).unwrap());
        prop_assert!(ab >= -1e-12);
        let fm = FeatureMap::build(2, 64, ell, &mut rng).unwrap();
        let (ea, eb) = (fm.mean_embedding(&a).unwrap(), fm.mean_embedding(&b).unwrap());
        let r = mmd2_rff(&ea, &eb).unwrap();
        prop_assert_eq!(r, mmd2_rff(&eb, &ea).unwrap());
        prop_assert!(r >= -1e-12);
        prop_assert_eq!(mmd2_rff(&ea, &ea).unwrap(), 0.0);
    }

    #[test]
    fn median_heuristic_is_scale_equivariant(seed in any::<u64>(), n in 2usize..40, k in -4i32..5) {
        // powers of two keep the scaling exact
        let c = 2f64.powi(k);
        let mut rng = rng_from_seed(seed);
        let data = normal_sample(n, 3, 0.0, &mut rng);
        let scaled = Matrix::from_vec(n, 3, data.as_slice().iter().map(|v| v * c).collect()).unwrap();
        let l1 = median_heuristic(&data, DEFAULT_MAX_PAIRS, &mut rng_from_seed(1)).unwrap();
        let l2 = median_heuristic(&scaled, DEFAULT_MAX_PAIRS, &mut rng_from_seed(1)).unwrap();
        prop_assert_eq!(l2, l1 * c);
    }

    #[test]
    fn embedding_ignores_row_duplication(seed in any::<u64>(), n in 1usize..20) {
        let mut rng = rng_from_seed(seed);
        let data = normal_sample(n, 2, 0.0, &mut rng);
        let fm = FeatureMap::build(2, 32, 1.0, &mut rng).unwrap();
        let mut doubled = Vec::new();
        for r in data.row_iter() {
            doubled.extend_from_slice(r);
            doubled.extend_from_slice(r);
        }
        let e1 = fm.mean_embedding(&data).unwrap();
        let e2 = fm.mean_embedding(&Matrix::from_vec(2 * n, 2, doubled).unwrap()).unwrap();
        for (a, b) in e1.values.iter().zip(&e2.values) {
            prop_assert!((a - b).abs() <= 1e-14);
        }
    }
}
