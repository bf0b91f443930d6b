//! Sample statistics used for Monte Carlo summaries and reports.

use serde::{Deserialize, Serialize};

/// z-value of a two-sided 95% normal interval.
pub const Z_95: f64 = 1.96;

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n − 1 denominator); 0 for a single sample.
pub fn std_dev(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
}

/// Standard error of the mean; undefined below two samples.
pub fn standard_error(xs: &[f64]) -> Option<f64> {
    (xs.len() >= 2).then(|| std_dev(xs) / (xs.len() as f64).sqrt())
}

pub fn range(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    hi - lo
}

/// Linear-interpolated quantile (type 7), `q ∈ [0, 1]`.
pub fn quantile(xs: &[f64], q: f64) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

pub fn median(xs: &[f64]) -> f64 {
    quantile(xs, 0.5)
}

/// Mean, spread and raw samples of a Monte Carlo estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionSummary {
    pub mean: f64,
    pub std: f64,
    pub standard_error: Option<f64>,
    pub min: f64,
    pub max: f64,
    pub samples: Vec<f64>,
}

impl DistributionSummary {
    pub fn from_samples(samples: Vec<f64>) -> Self {
        Self {
            mean: mean(&samples),
            std: std_dev(&samples),
            standard_error: standard_error(&samples),
            min: samples.iter().copied().fold(f64::INFINITY, f64::min),
            max: samples.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            samples,
        }
    }

    pub fn n(&self) -> usize {
        self.samples.len()
    }

    pub fn range(&self) -> f64 {
        if self.samples.is_empty() {
            0.0
        } else {
            self.max - self.min
        }
    }
}

/// Prefix running means with 95% normal confidence bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTrace {
    pub running_mean: Vec<f64>,
    /// Half-width `1.96·s/√n` of each prefix; `None` for the first prefix.
    pub half_width: Vec<Option<f64>>,
}

impl ConvergenceTrace {
    pub fn lower(&self) -> Vec<Option<f64>> {
        self.running_mean
            .iter()
            .zip(&self.half_width)
            .map(|(m, h)| h.map(|h| m - h))
            .collect()
    }

    pub fn upper(&self) -> Vec<Option<f64>> {
        self.running_mean
            .iter()
            .zip(&self.half_width)
            .map(|(m, h)| h.map(|h| m + h))
            .collect()
    }
}

/// Running mean and CI over every prefix, using Welford updates.
pub fn convergence_trace(samples: &[f64]) -> ConvergenceTrace {
    let mut running_mean = Vec::with_capacity(samples.len());
    let mut half_width = Vec::with_capacity(samples.len());
    let (mut m, mut m2) = (0.0, 0.0);
    for (i, x) in samples.iter().enumerate() {
        let n = (i + 1) as f64;
        let d = x - m;
        m += d / n;
        m2 += d * (x - m);
        running_mean.push(m);
        half_width.push((i >= 1).then(|| Z_95 * (m2.max(0.0) / (n - 1.0)).sqrt() / n.sqrt()));
    }
    ConvergenceTrace {
        running_mean,
        half_width,
    }
}

/// Equal-width histogram bin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

/// Equal-width histogram; the last bin is closed on the right.
pub fn histogram(xs: &[f64], n_bins: usize) -> Vec<Bin> {
    let n_bins = n_bins.max(1);
    if xs.is_empty() {
        return Vec::new();
    }
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / n_bins as f64 } else { 1.0 };
    let mut bins: Vec<Bin> = (0..n_bins)
        .map(|b| Bin {
            lo: lo + b as f64 * width,
            hi: lo + (b + 1) as f64 * width,
            count: 0,
        })
        .collect();
    for x in xs {
        let b = (((x - lo) / width).floor() as usize).min(n_bins - 1);
        bins[b].count += 1;
    }
    bins
}
