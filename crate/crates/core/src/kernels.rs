//! Gaussian kernel, random Fourier features, mean embeddings and MMD.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::linalg::{gemm, squared_distance, Matrix};
use crate::rng::rng_from_seed;

/// Default cap on the number of pairs used by the median heuristic.
pub const DEFAULT_MAX_PAIRS: usize = 1_000_000;

/// Lower bound on any bandwidth produced by the median heuristic.
pub const MIN_BANDWIDTH: f64 = 1e-8;

/// `exp(-‖x − y‖² / (2ℓ²))`.
#[inline]
pub fn rbf(x: &[f64], y: &[f64], bandwidth: f64) -> f64 {
    libm::exp(-squared_distance(x, y) / (2.0 * bandwidth * bandwidth))
}

/// Median of pairwise Euclidean distances between the rows of `data`.
pub fn median_heuristic<R: Rng + ?Sized>(
    data: &Matrix,
    max_pairs: usize,
    rng: &mut R,
) -> Result<f64> {
    let rows: Vec<&[f64]> = data.row_iter().collect();
    median_heuristic_rows(&rows, max_pairs, rng)
}

/// Median heuristic over the rows of several datasets pooled together.
pub fn median_heuristic_pooled<'a, R, I>(datasets: I, max_pairs: usize, rng: &mut R) -> Result<f64>
where
    R: Rng + ?Sized,
    I: IntoIterator<Item = &'a Matrix>,
{
    let rows: Vec<&[f64]> = datasets.into_iter().flat_map(|m| m.row_iter()).collect();
    median_heuristic_rows(&rows, max_pairs, rng)
}

pub fn median_heuristic_rows<R: Rng + ?Sized>(
    rows: &[&[f64]],
    max_pairs: usize,
    rng: &mut R,
) -> Result<f64> {
    let n = rows.len();
    ensure!(
        n >= 2,
        "median heuristic needs at least two rows, got {}",
        n
    );
    ensure!(max_pairs >= 1, "max_pairs must be positive");
    let total = (n as u128) * (n as u128 - 1) / 2;
    let mut dists: Vec<f64> = if total <= max_pairs as u128 {
        let mut d = Vec::with_capacity(total as usize);
        for i in 0..n {
            for j in i + 1..n {
                d.push(libm::sqrt(squared_distance(rows[i], rows[j])));
            }
        }
        d
    } else {
        sample_pairs(n, max_pairs, rng)
            .into_iter()
            .map(|key| {
                let (i, j) = ((key / n as u64) as usize, (key % n as u64) as usize);
                libm::sqrt(squared_distance(rows[i], rows[j]))
            })
            .collect()
    };
    let m = dists.len();
    let upper = {
        let (_, x, _) = dists.select_nth_unstable_by(m / 2, f64::total_cmp);
        *x
    };
    let med = if m % 2 == 1 {
        upper
    } else {
        let lower = dists[..m / 2]
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    };
    Ok(med.max(MIN_BANDWIDTH))
}

/// `count` distinct unordered pairs `i < j`, encoded as `i * n + j`, sorted.
fn sample_pairs<R: Rng + ?Sized>(n: usize, count: usize, rng: &mut R) -> Vec<u64> {
    let mut keys: Vec<u64> = Vec::with_capacity(count);
    while keys.len() < count {
        while keys.len() < count {
            let i = rng.random_range(0..n);
            let j = rng.random_range(0..n);
            if i != j {
                let (a, b) = if i < j { (i, j) } else { (j, i) };
                keys.push(a as u64 * n as u64 + b as u64);
            }
        }
        keys.sort_unstable();
        keys.dedup();
    }
    keys
}

/// Frozen random Fourier feature map `z(x) = sqrt(2/K) cos(Wx + b)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    #[serde(rename = "d")]
    input_dim: usize,
    #[serde(rename = "K")]
    feature_dim: usize,
    #[serde(with = "crate::serial::f64_bits")]
    bandwidth: f64,
    /// `K × d`, rows i.i.d. `N(0, I/ℓ²)`.
    #[serde(rename = "W")]
    frequencies: Matrix,
    #[serde(rename = "b", with = "crate::serial::f64_vec")]
    offsets: Vec<f64>,
}

impl FeatureMap {
    pub fn build<R: Rng + ?Sized>(
        input_dim: usize,
        feature_dim: usize,
        bandwidth: f64,
        rng: &mut R,
    ) -> Result<Self> {
        ensure!(input_dim >= 1, "input dimension must be positive");
        ensure!(feature_dim >= 1, "feature dimension must be positive");
        ensure!(
            bandwidth > 0.0 && bandwidth.is_finite(),
            "bandwidth must be positive and finite, got {}",
            bandwidth
        );
        let mut w = Vec::with_capacity(input_dim * feature_dim);
        for _ in 0..input_dim * feature_dim {
            let g: f64 = StandardNormal.sample(rng);
            w.push(g / bandwidth);
        }
        let offsets = (0..feature_dim)
            .map(|_| rng.random_range(0.0..2.0 * PI))
            .collect();
        Ok(FeatureMap {
            input_dim,
            feature_dim,
            bandwidth,
            frequencies: Matrix::from_raw(feature_dim, input_dim, w),
            offsets,
        })
    }

    pub fn from_parts(frequencies: Matrix, offsets: Vec<f64>, bandwidth: f64) -> Result<Self> {
        ensure!(
            !frequencies.is_empty(),
            "frequency matrix must be non-empty"
        );
        ensure!(
            offsets.len() == frequencies.rows(),
            "need one offset per frequency"
        );
        ensure!(bandwidth > 0.0, "bandwidth must be positive");
        Ok(FeatureMap {
            input_dim: frequencies.cols(),
            feature_dim: frequencies.rows(),
            bandwidth,
            frequencies,
            offsets,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn frequencies(&self) -> &Matrix {
        &self.frequencies
    }

    pub fn offsets(&self) -> &[f64] {
        &self.offsets
    }

    fn scale(&self) -> f64 {
        libm::sqrt(2.0 / self.feature_dim as f64)
    }

    /// Features of a single point.
    pub fn features(&self, x: &[f64]) -> Result<Vec<f64>> {
        ensure!(
            x.len() == self.input_dim,
            "point has dimension {}, feature map expects {}",
            x.len(),
            self.input_dim
        );
        let c = self.scale();
        Ok(self
            .frequencies
            .row_iter()
            .zip(&self.offsets)
            .map(|(w, b)| {
                let p: f64 = w.iter().zip(x).map(|(a, b)| a * b).sum();
                c * libm::cos(p + b)
            })
            .collect())
    }

    /// Empirical mean embedding `(1/N) Σ_n z(x_n)` over the rows of `data`.
    pub fn mean_embedding(&self, data: &Matrix) -> Result<MeanEmbedding> {
        ensure!(data.rows() > 0, "cannot embed an empty dataset");
        ensure!(
            data.cols() == self.input_dim,
            "dataset has {} columns, feature map expects {}",
            data.cols(),
            self.input_dim
        );
        const CHUNK: usize = 256;
        let mut acc = vec![0.0; self.feature_dim];
        let mut accumulate = |rows: &Matrix| {
            let mut proj = Matrix::zeros(rows.rows(), self.feature_dim);
            gemm(1.0, rows, false, &self.frequencies, true, 0.0, &mut proj);
            for r in proj.row_iter() {
                for ((a, p), b) in acc.iter_mut().zip(r).zip(&self.offsets) {
                    *a += libm::cos(p + b);
                }
            }
        };
        if data.rows() <= CHUNK {
            accumulate(data);
        } else {
            let idx: Vec<usize> = (0..data.rows()).collect();
            for chunk in idx.chunks(CHUNK) {
                accumulate(&data.select_rows(chunk));
            }
        }
        let c = self.scale() / data.rows() as f64;
        acc.iter_mut().for_each(|a| *a *= c);
        Ok(MeanEmbedding {
            values: acc,
            sample_count: data.rows(),
        })
    }
}

/// A point in RFF space representing a distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanEmbedding {
    #[serde(with = "crate::serial::f64_vec")]
    pub values: Vec<f64>,
    pub sample_count: usize,
}

impl MeanEmbedding {
    pub fn new(values: Vec<f64>, sample_count: usize) -> Self {
        MeanEmbedding {
            values,
            sample_count,
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// `(1 − w) · self + w · other`, e.g. for Huber mixtures of embeddings.
    pub fn mix(&self, other: &MeanEmbedding, w: f64) -> Result<MeanEmbedding> {
        ensure!(self.dim() == other.dim(), "embedding dimensions differ");
        Ok(MeanEmbedding {
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| (1.0 - w) * a + w * b)
                .collect(),
            sample_count: self.sample_count,
        })
    }
}

/// `‖a − b‖²` between two RFF mean embeddings.
pub fn mmd2_rff(a: &MeanEmbedding, b: &MeanEmbedding) -> Result<f64> {
    ensure!(
        a.dim() == b.dim(),
        "embedding dimensions differ: {} vs {}",
        a.dim(),
        b.dim()
    );
    Ok(squared_distance(&a.values, &b.values))
}

/// Order-independent sum of kernel values in `[0, 1]` via 2^-62 fixed point.
#[derive(Default)]
struct KernelSum(u128);

impl KernelSum {
    const SCALE: f64 = (1u64 << 62) as f64;

    #[inline]
    fn add(&mut self, k: f64) {
        self.0 += libm::round(k.clamp(0.0, 1.0) * Self::SCALE) as u128;
    }

    fn value(&self) -> f64 {
        self.0 as f64 / Self::SCALE
    }
}

/// Biased (V-statistic) squared MMD with the exact Gaussian kernel.
///
/// Symmetric in its arguments bit for bit.
pub fn mmd2_exact(bandwidth: f64, x: &Matrix, y: &Matrix) -> Result<f64> {
    ensure!(x.rows() > 0 && y.rows() > 0, "MMD needs non-empty samples");
    ensure!(x.cols() == y.cols(), "samples have different dimensions");
    ensure!(bandwidth > 0.0, "bandwidth must be positive");
    let gram = |a: &Matrix, b: &Matrix| {
        let mut s = KernelSum::default();
        for r in a.row_iter() {
            for q in b.row_iter() {
                s.add(rbf(r, q, bandwidth));
            }
        }
        s.value()
    };
    let (n, m) = (x.rows() as f64, y.rows() as f64);
    let kxx = gram(x, x) / (n * n);
    let kyy = gram(y, y) / (m * m);
    let kxy = gram(x, y) / (n * m);
    Ok(kxx + kyy - 2.0 * kxy)
}

/// Seed used when a metric subsamples pairs for its bandwidth.
const METRIC_PAIR_SEED: u64 = 0x6d6d_645f_6d65_6469;
/// Pair budget for metric bandwidths; two 1000-sample sets have ~2M pairs.
pub const METRIC_MAX_PAIRS: usize = 100_000;

/// Median-heuristic bandwidth on `a ∪ b`, independent of argument order.
pub fn pooled_bandwidth(a: &Matrix, b: &Matrix) -> Result<f64> {
    let mut rows: Vec<&[f64]> = a.row_iter().chain(b.row_iter()).collect();
    rows.sort_by(|p, q| {
        p.iter()
            .zip(q.iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(core::cmp::Ordering::Equal)
    });
    median_heuristic_rows(
        &rows,
        METRIC_MAX_PAIRS,
        &mut rng_from_seed(METRIC_PAIR_SEED),
    )
}
