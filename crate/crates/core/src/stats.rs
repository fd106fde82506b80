//! Sample summaries, goodness-of-fit distances and small regressions.

use serde::{Deserialize, Serialize};

/// Sample mean with its standard error `sd / sqrt(n)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
    pub sd: f64,
    pub n: usize,
}

impl MeanSe {
    #[allow(clippy::should_implement_trait)]
    pub fn from_iter(values: impl IntoIterator<Item = f64>) -> Self {
        // Welford; stable and order-deterministic.
        let mut n = 0usize;
        let mut mean = 0.0;
        let mut m2 = 0.0;
        for x in values {
            n += 1;
            let dx = x - mean;
            mean += dx / n as f64;
            m2 += dx * (x - mean);
        }
        let var = if n > 1 { m2 / (n - 1) as f64 } else { 0.0 };
        let sd = var.sqrt();
        let se = if n > 0 { sd / (n as f64).sqrt() } else { f64::NAN };
        Self { mean, se, sd, n }
    }

    pub fn of(values: &[f64]) -> Self {
        Self::from_iter(values.iter().copied())
    }

    /// `|mean - target|` in units of the standard error.
    pub fn z_score(&self, target: f64) -> f64 {
        let diff = (self.mean - target).abs();
        if self.se > 0.0 {
            diff / self.se
        } else if diff == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    }

    pub fn within(&self, target: f64, n_se: f64) -> bool {
        self.z_score(target) <= n_se
    }
}

/// Sorted sample with empirical CDF queries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalDistribution {
    sorted: Vec<f64>,
}

impl EmpiricalDistribution {
    pub fn new(mut samples: Vec<f64>) -> Self {
        samples.sort_by(f64::total_cmp);
        Self { sorted: samples }
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn samples(&self) -> &[f64] {
        &self.sorted
    }

    /// Fraction of samples `<= x`.
    pub fn cdf(&self, x: f64) -> f64 {
        self.count_le(x) as f64 / self.sorted.len() as f64
    }

    pub fn count_le(&self, x: f64) -> usize {
        self.sorted.partition_point(|&s| s <= x)
    }

    pub fn mean(&self) -> MeanSe {
        MeanSe::of(&self.sorted)
    }

    /// Sample mean of `x^k` with standard error.
    pub fn raw_moment(&self, k: i32) -> MeanSe {
        MeanSe::from_iter(self.sorted.iter().map(|x| x.powi(k)))
    }

    /// Kolmogorov–Smirnov distance to a continuous CDF.
    pub fn ks_against(&self, cdf: impl Fn(f64) -> f64) -> f64 {
        ks_sorted(&self.sorted, cdf)
    }

    pub fn ks_two_sample(&self, other: &EmpiricalDistribution) -> f64 {
        ks_two_sample_sorted(&self.sorted, &other.sorted)
    }

    pub fn histogram(&self, lo: f64, hi: f64, bins: usize) -> Histogram {
        Histogram::from_samples(&self.sorted, lo, hi, bins)
    }
}

/// KS distance between sorted samples (ties allowed) and a continuous CDF.
pub fn ks_sorted(sorted: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let n = sorted.len() as f64;
    let mut d: f64 = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let x = sorted[i];
        let mut j = i;
        while j < sorted.len() && sorted[j] == x {
            j += 1;
        }
        let f = cdf(x);
        let below = i as f64 / n;
        let at = j as f64 / n;
        d = d.max((at - f).abs()).max((f - below).abs());
        i = j;
    }
    d
}

/// Kolmogorov–Smirnov distance for samples given in any order.
pub fn ks_one_sample(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    ks_sorted(&s, cdf)
}

/// Two-sample KS distance between sorted samples.
pub fn ks_two_sample_sorted(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    ks_two_sample_sorted(&a, &b)
}

/// `0.5 * sum |p_k - q_k|`, treating missing entries as zero.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    let n = p.len().max(q.len());
    0.5 * (0..n)
        .map(|k| (p.get(k).copied().unwrap_or(0.0) - q.get(k).copied().unwrap_or(0.0)).abs())
        .sum::<f64>()
}

/// Normalized frequencies of nonnegative integer observations.
pub fn empirical_pmf(values: impl IntoIterator<Item = u64>) -> Vec<f64> {
    let mut counts: Vec<u64> = Vec::new();
    let mut n = 0u64;
    for v in values {
        let k = v as usize;
        if k >= counts.len() {
            counts.resize(k + 1, 0);
        }
        counts[k] += 1;
        n += 1;
    }
    counts.into_iter().map(|c| c as f64 / n as f64).collect()
}

/// Equal-width bins on `[lo, hi)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub width: f64,
    pub counts: Vec<u64>,
    /// Number of samples the histogram was built from (including out-of-range ones).
    pub total: u64,
}

impl Histogram {
    pub fn from_samples(samples: &[f64], lo: f64, hi: f64, bins: usize) -> Self {
        let width = (hi - lo) / bins as f64;
        let mut counts = vec![0u64; bins];
        for &x in samples {
            if x >= lo && x < hi {
                let b = (((x - lo) / width) as usize).min(bins - 1);
                counts[b] += 1;
            }
        }
        Self {
            lo,
            width,
            counts,
            total: samples.len() as u64,
        }
    }

    pub fn center(&self, bin: usize) -> f64 {
        self.lo + (bin as f64 + 0.5) * self.width
    }

    /// Estimated probability density in `bin`.
    pub fn density(&self, bin: usize) -> f64 {
        self.counts[bin] as f64 / (self.total as f64 * self.width)
    }
}

/// Result of a (weighted) straight-line least-squares fit `y = intercept + slope x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
    pub intercept_se: f64,
    /// Weighted residual sum of squares.
    pub rss: f64,
}

/// Weighted least squares. With `weights = None` every point has weight one and
/// the standard errors use the residual variance; with explicit weights
/// (`1 / variance`) the standard errors come from the weights alone.
pub fn linear_fit(x: &[f64], y: &[f64], weights: Option<&[f64]>) -> LinearFit {
    assert_eq!(x.len(), y.len());
    let n = x.len();
    let w = |i: usize| weights.map_or(1.0, |w| w[i]);
    let sw: f64 = (0..n).map(w).sum();
    let mx = (0..n).map(|i| w(i) * x[i]).sum::<f64>() / sw;
    let my = (0..n).map(|i| w(i) * y[i]).sum::<f64>() / sw;
    let sxx: f64 = (0..n).map(|i| w(i) * (x[i] - mx).powi(2)).sum();
    let sxy: f64 = (0..n).map(|i| w(i) * (x[i] - mx) * (y[i] - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = (0..n)
        .map(|i| w(i) * (y[i] - intercept - slope * x[i]).powi(2))
        .sum();
    let scale = match weights {
        None if n > 2 => rss / (n - 2) as f64,
        None => f64::NAN,
        Some(_) => 1.0,
    };
    let slope_var = scale / sxx;
    let intercept_var = scale * (1.0 / sw + mx * mx / sxx);
    LinearFit {
        slope,
        intercept,
        slope_se: slope_var.sqrt(),
        intercept_se: intercept_var.sqrt(),
        rss,
    }
}

/// Pearson correlation coefficient.
pub fn correlation(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    sxy / (sxx * syy).sqrt()
}
