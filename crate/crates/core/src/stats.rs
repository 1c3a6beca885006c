//! Small order statistics and summation helpers.

use alloc::vec::Vec;

/// Sum that depends only on the multiset of values, not their order.
///
/// Summaries must be exactly permutation invariant; sorting before
/// accumulating gives that.
pub fn invariant_sum(values: &mut [f64]) -> f64 {
    values.sort_unstable_by(f64::total_cmp);
    values.iter().sum()
}

pub fn invariant_mean(values: &mut [f64]) -> f64 {
    let n = values.len() as f64;
    invariant_sum(values) / n
}

/// Empirical quantile with linear interpolation between order statistics
/// (Hyndman-Fan type 7). `sorted` must be ascending and non-empty.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = libm::floor(h) as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn quantile(values: &[f64], p: f64) -> f64 {
    let mut v: Vec<f64> = values.to_vec();
    v.sort_unstable_by(f64::total_cmp);
    quantile_sorted(&v, p)
}

pub fn median(values: &[f64]) -> f64 {
    quantile(values, 0.5)
}

/// Pearson correlation; zero when either side has no variance.
pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return 0.0;
    }
    sab / libm::sqrt(saa * sbb)
}

/// Pearson correlation that is unchanged, bit for bit, when the pairs
/// `(a[i], b[i])` are reordered. Zero when either side is (numerically)
/// constant.
pub fn invariant_correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = invariant_mean(&mut a.to_vec());
    let mb = invariant_mean(&mut b.to_vec());
    let mut ab: Vec<f64> = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).collect();
    let mut aa: Vec<f64> = a.iter().map(|x| (x - ma) * (x - ma)).collect();
    let mut bb: Vec<f64> = b.iter().map(|y| (y - mb) * (y - mb)).collect();
    let (sab, saa, sbb) = (
        invariant_sum(&mut ab),
        invariant_sum(&mut aa),
        invariant_sum(&mut bb),
    );
    let floor = |m: f64| {
        let scale = 1e-12 * m.abs();
        n * scale * scale
    };
    if saa <= floor(ma) || sbb <= floor(mb) {
        return 0.0;
    }
    sab / libm::sqrt(saa * sbb)
}
