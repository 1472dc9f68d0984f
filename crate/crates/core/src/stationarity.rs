//! Histograms, distances, goodness-of-fit tests and comparison reports.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quadrature::{integrate, integrate_rect, QuadError, QuadOptions};
use crate::special::chi2_sf;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatError {
    #[error("bin edges must be strictly increasing with at least two entries")]
    Edges,
    #[error("mismatched supports: {0}")]
    Mismatch(String),
    #[error("distribution has no mass")]
    Empty,
    #[error("too few bins with expected count >= 5 (got {0}); need at least two")]
    TooFewBins(usize),
    #[error("degrees of freedom would be {0}")]
    Dof(i64),
    #[error("moment order must be 1..=4, got {0}")]
    Order(u32),
    #[error("not enough samples: {0}")]
    Samples(usize),
    #[error(transparent)]
    Quad(#[from] QuadError),
    #[error("{0}")]
    Special(String),
}

/// Weighted histogram over one or two dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    edges: Vec<Vec<f64>>,
    counts: Vec<f64>,
    total: f64,
    outside: f64,
}

fn check_edges(e: &[f64]) -> Result<(), StatError> {
    if e.len() < 2 || e.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(StatError::Edges);
    }
    Ok(())
}

fn uniform_edges(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..=n).map(|k| lo + (hi - lo) * k as f64 / n as f64).collect()
}

fn locate(edges: &[f64], v: f64) -> Option<usize> {
    if !(v >= edges[0] && v <= edges[edges.len() - 1]) {
        return None;
    }
    // partition_point gives the first edge > v
    let k = edges.partition_point(|e| *e <= v);
    Some(k.saturating_sub(1).min(edges.len() - 2))
}

impl Histogram {
    pub fn new(edges: Vec<Vec<f64>>) -> Result<Self, StatError> {
        if edges.is_empty() || edges.len() > 2 {
            return Err(StatError::Mismatch(String::from("histograms are 1-D or 2-D")));
        }
        for e in &edges {
            check_edges(e)?;
        }
        let bins = edges.iter().map(|e| e.len() - 1).product();
        Ok(Self { edges, counts: vec![0.0; bins], total: 0.0, outside: 0.0 })
    }

    pub fn uniform_1d(lo: f64, hi: f64, n: usize) -> Result<Self, StatError> {
        Self::new(vec![uniform_edges(lo, hi, n)])
    }

    pub fn uniform_2d(x: (f64, f64, usize), y: (f64, f64, usize)) -> Result<Self, StatError> {
        Self::new(vec![uniform_edges(x.0, x.1, x.2), uniform_edges(y.0, y.1, y.2)])
    }

    pub fn dims(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Vec<f64>] {
        &self.edges
    }

    pub fn counts(&self) -> &[f64] {
        &self.counts
    }

    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    /// Weight recorded inside the bins.
    pub fn total(&self) -> f64 {
        self.total
    }

    /// Weight of points that fell outside every bin.
    pub fn outside(&self) -> f64 {
        self.outside
    }

    /// Bin index of a point, row-major over `(first, second)` coordinates.
    pub fn bin_of(&self, point: &[f64]) -> Option<usize> {
        match self.edges.len() {
            1 => locate(&self.edges[0], point[0]),
            _ => {
                let i = locate(&self.edges[0], point[0])?;
                let j = locate(&self.edges[1], point[1])?;
                Some(i * (self.edges[1].len() - 1) + j)
            }
        }
    }

    pub fn add(&mut self, point: &[f64], weight: f64) {
        match self.bin_of(point) {
            Some(k) => {
                self.counts[k] += weight;
                self.total += weight;
            }
            None => self.outside += weight,
        }
    }

    /// Bounds of bin `k`: `[(lo, hi)]` per dimension.
    pub fn bin_bounds(&self, k: usize) -> Vec<(f64, f64)> {
        match self.edges.len() {
            1 => vec![(self.edges[0][k], self.edges[0][k + 1])],
            _ => {
                let ny = self.edges[1].len() - 1;
                let (i, j) = (k / ny, k % ny);
                vec![(self.edges[0][i], self.edges[0][i + 1]), (self.edges[1][j], self.edges[1][j + 1])]
            }
        }
    }

    pub fn probabilities(&self) -> Result<Vec<f64>, StatError> {
        if !(self.total > 0.0) {
            return Err(StatError::Empty);
        }
        Ok(self.counts.iter().map(|c| c / self.total).collect())
    }

    pub fn same_bins(&self, other: &Histogram) -> bool {
        self.edges == other.edges
    }

    /// Probability of each bin under a density on the histogram's range,
    /// normalized over that range. For 2-D the density takes `(first, second)`.
    pub fn expected_masses(&self, density: impl Fn(&[f64]) -> f64, opts: QuadOptions) -> Result<Vec<f64>, StatError> {
        let mut masses = Vec::with_capacity(self.bins());
        for k in 0..self.bins() {
            let b = self.bin_bounds(k);
            let v = if b.len() == 1 {
                integrate(|x| density(&[x]), b[0].0, b[0].1, opts)?.value
            } else {
                integrate_rect(|x, y| density(&[x, y]), b[0], b[1], opts)?.value
            };
            masses.push(v);
        }
        normalize(&masses)
    }
}

fn normalize(p: &[f64]) -> Result<Vec<f64>, StatError> {
    let s: f64 = p.iter().sum();
    if !(s > 0.0) || p.iter().any(|v| *v < 0.0) {
        return Err(StatError::Empty);
    }
    Ok(p.iter().map(|v| v / s).collect())
}

/// `(1/2) sum |p - q|` after normalizing both.
pub fn tv_distance(p: &[f64], q: &[f64]) -> Result<f64, StatError> {
    if p.len() != q.len() {
        return Err(StatError::Mismatch(format!("{} bins vs {} bins", p.len(), q.len())));
    }
    let p = normalize(p)?;
    let q = normalize(q)?;
    Ok(0.5 * p.iter().zip(&q).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

pub fn tv_histograms(a: &Histogram, b: &Histogram) -> Result<f64, StatError> {
    if !a.same_bins(b) {
        return Err(StatError::Mismatch(String::from("histogram bin edges differ")));
    }
    tv_distance(&a.counts, &b.counts)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Chi2Result {
    pub statistic: f64,
    pub dof: u32,
    pub p_value: f64,
    /// Groups left after merging sparse bins.
    pub groups: usize,
}

/// Pearson test of histogram counts against bin probabilities.
///
/// Consecutive bins are merged until each group expects at least 5 counts.
/// `dof_correction` is the number of fitted parameters.
pub fn chi2_test(hist: &Histogram, expected: &[f64], dof_correction: u32) -> Result<Chi2Result, StatError> {
    if expected.len() != hist.bins() {
        return Err(StatError::Mismatch(format!("{} expected masses for {} bins", expected.len(), hist.bins())));
    }
    let probs = normalize(expected)?;
    let n = hist.total;
    let mut groups: Vec<(f64, f64)> = Vec::new();
    let mut acc = (0.0, 0.0);
    for (c, p) in hist.counts.iter().zip(&probs) {
        acc.0 += c;
        acc.1 += p * n;
        if acc.1 >= 5.0 {
            groups.push(acc);
            acc = (0.0, 0.0);
        }
    }
    if acc.1 > 0.0 || acc.0 > 0.0 {
        match groups.last_mut() {
            Some(g) => {
                g.0 += acc.0;
                g.1 += acc.1;
            }
            None => groups.push(acc),
        }
    }
    if groups.len() < 2 {
        return Err(StatError::TooFewBins(groups.len()));
    }
    let dof = groups.len() as i64 - 1 - dof_correction as i64;
    if dof < 1 {
        return Err(StatError::Dof(dof));
    }
    let statistic: f64 = groups.iter().map(|(o, e)| (o - e) * (o - e) / e).sum();
    let p_value = chi2_sf(statistic, dof as f64).map_err(|e| StatError::Special(format!("{e}")))?;
    Ok(Chi2Result { statistic, dof: dof as u32, p_value, groups: groups.len() })
}

/// Kolmogorov-Smirnov statistic `sup |F_n - F|`. Sorts `samples` in place.
pub fn ks_statistic(samples: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    samples.sort_by(|a, b| a.total_cmp(b));
    let n = samples.len() as f64;
    let mut d = 0.0f64;
    for (i, &x) in samples.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    d
}

/// Asymptotic 1% critical value of the one-sample KS statistic.
pub fn ks_critical_1pct(n: usize) -> f64 {
    1.628 / (n as f64).sqrt()
}

/// Batch-means accumulator for the mean of a correlated sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchMeans {
    batch_len: u64,
    cur_sum: f64,
    cur_n: u64,
    means: Vec<f64>,
    sum: f64,
    n: u64,
}

impl BatchMeans {
    pub fn new(batch_len: u64) -> Self {
        Self { batch_len: batch_len.max(1), cur_sum: 0.0, cur_n: 0, means: Vec::new(), sum: 0.0, n: 0 }
    }

    pub fn push(&mut self, v: f64) {
        self.cur_sum += v;
        self.cur_n += 1;
        self.sum += v;
        self.n += 1;
        if self.cur_n == self.batch_len {
            self.means.push(self.cur_sum / self.batch_len as f64);
            self.cur_sum = 0.0;
            self.cur_n = 0;
        }
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.sum / self.n as f64
    }

    /// Standard error from the spread of complete batch means.
    pub fn standard_error(&self) -> f64 {
        let b = self.means.len();
        if b < 2 {
            return f64::INFINITY;
        }
        let m = self.means.iter().sum::<f64>() / b as f64;
        let var = self.means.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (b as f64 - 1.0);
        (var / b as f64).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    Tv,
    Chi2,
    Ks,
    L1,
    MaxResidual,
    /// Absolute error in standard-error units.
    StandardErrors,
    /// Absolute error in natural units.
    AbsError,
}

/// One verification outcome. `pass` is `value <= threshold`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub model: String,
    pub test: String,
    pub statistic: Statistic,
    pub value: f64,
    pub threshold: f64,
    pub pass: bool,
    pub sample_size: u64,
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub estimate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub target: Option<f64>,
}

impl ComparisonReport {
    pub fn new(model: &str, test: &str, statistic: Statistic, value: f64, threshold: f64) -> Self {
        Self {
            model: String::from(model),
            test: String::from(test),
            statistic,
            value,
            threshold,
            pass: value <= threshold,
            sample_size: 0,
            seed: None,
            estimate: None,
            target: None,
        }
    }

    pub fn with_samples(mut self, n: u64, seed: Option<u64>) -> Self {
        self.sample_size = n;
        self.seed = seed;
        self
    }

    pub fn with_estimate(mut self, estimate: f64, target: f64) -> Self {
        self.estimate = Some(estimate);
        self.target = Some(target);
        self
    }

    /// Checks that are expected to fail: pass when `value > threshold`.
    pub fn negative_control(model: &str, test: &str, statistic: Statistic, value: f64, threshold: f64) -> Self {
        let mut r = Self::new(model, test, statistic, -value, -threshold);
        r.pass = value > threshold;
        r
    }
}

/// Empirical `k`-th raw moment of iid samples against `target`, within
/// `tolerance` standard errors.
pub fn moment_check(samples: &[f64], k: u32, target: f64, tolerance: f64) -> Result<ComparisonReport, StatError> {
    if !(1..=4).contains(&k) {
        return Err(StatError::Order(k));
    }
    if samples.len() < 2 {
        return Err(StatError::Samples(samples.len()));
    }
    let n = samples.len() as f64;
    let pw: Vec<f64> = samples.iter().map(|x| x.powi(k as i32)).collect();
    let mean = pw.iter().sum::<f64>() / n;
    let var = pw.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    let se = (var / n).sqrt();
    let z = if se > 0.0 { (mean - target).abs() / se } else if mean == target { 0.0 } else { f64::INFINITY };
    Ok(ComparisonReport::new("samples", &format!("moment_{k}"), Statistic::StandardErrors, z, tolerance)
        .with_samples(samples.len() as u64, None)
        .with_estimate(mean, target))
}

/// Like [`moment_check`] for a correlated series, using batch means.
pub fn moment_check_batched(samples: &[f64], k: u32, target: f64, tolerance: f64, batches: usize) -> Result<ComparisonReport, StatError> {
    if !(1..=4).contains(&k) {
        return Err(StatError::Order(k));
    }
    if batches < 2 || samples.len() < batches {
        return Err(StatError::Samples(samples.len()));
    }
    let mut bm = BatchMeans::new((samples.len() / batches) as u64);
    for x in samples {
        bm.push(x.powi(k as i32));
    }
    let z = (bm.mean() - target).abs() / bm.standard_error();
    Ok(ComparisonReport::new("series", &format!("moment_{k}"), Statistic::StandardErrors, z, tolerance)
        .with_samples(samples.len() as u64, None)
        .with_estimate(bm.mean(), target))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use crate::special::normal_cdf;

    #[test]
    fn tv_examples() {
        assert_eq!(tv_distance(&[0.2, 0.8], &[0.2, 0.8]).unwrap(), 0.0);
        assert_eq!(tv_distance(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert!((tv_distance(&[0.6, 0.4], &[0.5, 0.5]).unwrap() - 0.1).abs() < 1e-15);
        assert!(tv_distance(&[1.0], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn histogram_binning() {
        let mut h = Histogram::uniform_1d(0.0, 1.0, 4).unwrap();
        for x in [0.0, 0.1, 0.26, 0.99, 1.0, 1.5] {
            h.add(&[x], 1.0);
        }
        assert_eq!(h.counts(), &[2.0, 1.0, 0.0, 2.0]);
        assert_eq!(h.outside(), 1.0);
        let mut g = Histogram::uniform_2d((0.0, 2.0, 2), (0.0, 3.0, 3)).unwrap();
        g.add(&[1.5, 0.5], 2.0);
        assert_eq!(g.bin_of(&[1.5, 0.5]), Some(3));
        assert_eq!(g.bin_bounds(3), vec![(1.0, 2.0), (0.0, 1.0)]);
        assert!(Histogram::new(vec![vec![0.0, 0.0]]).is_err());
    }

    #[test]
    fn expected_masses_uniform() {
        let h = Histogram::uniform_2d((0.0, 1.0, 2), (0.0, 1.0, 2)).unwrap();
        let m = h.expected_masses(|_| 3.0, QuadOptions::default()).unwrap();
        assert!(m.iter().all(|v| (v - 0.25).abs() < 1e-14));
    }

    #[test]
    fn chi2_calibration_and_control() {
        let mut rng = RngStream::new(11);
        let mut h = Histogram::uniform_1d(0.0, 1.0, 20).unwrap();
        for _ in 0..100_000 {
            h.add(&[rng.uniform()], 1.0);
        }
        let flat = h.expected_masses(|_| 1.0, QuadOptions::default()).unwrap();
        let r = chi2_test(&h, &flat, 0).unwrap();
        assert!(r.p_value > 0.01, "{r:?}");
        let mut lin = Histogram::uniform_1d(0.0, 1.0, 20).unwrap();
        for _ in 0..100_000 {
            lin.add(&[rng.uniform().sqrt()], 1.0);
        }
        let r = chi2_test(&lin, &flat, 0).unwrap();
        assert!(r.p_value < 1e-6);
        let mut one = Histogram::uniform_1d(0.0, 1.0, 3).unwrap();
        one.add(&[0.5], 6.0);
        assert!(matches!(chi2_test(&one, &[1.0, 1.0, 1.0], 0), Err(StatError::TooFewBins(1))));
    }

    #[test]
    fn ks_normal_samples() {
        let mut rng = RngStream::new(5);
        let mut s: Vec<f64> = (0..20_000).map(|_| rng.gaussian()).collect();
        let d = ks_statistic(&mut s, normal_cdf);
        assert!(d < ks_critical_1pct(s.len()));
        let mut shifted: Vec<f64> = s.iter().map(|x| x + 0.1).collect();
        assert!(ks_statistic(&mut shifted, normal_cdf) > ks_critical_1pct(s.len()));
    }

    #[test]
    fn moment_checks() {
        let mut rng = RngStream::new(8);
        let s: Vec<f64> = (0..50_000).map(|_| 2f64.sqrt() * rng.gaussian()).collect();
        let r = moment_check(&s, 2, 2.0, 3.0).unwrap();
        assert!(r.pass, "{r:?}");
        let r = moment_check(&s, 2, 2.2, 3.0).unwrap();
        assert!(!r.pass);
        assert!(moment_check(&s, 5, 0.0, 3.0).is_err());
    }

    #[test]
    fn batch_means_on_ar1() {
        let mut rng = RngStream::new(9);
        let mut x = 0.0;
        let s: Vec<f64> = (0..200_000)
            .map(|_| {
                x = 0.9 * x + rng.gaussian();
                x
            })
            .collect();
        let r = moment_check_batched(&s, 1, 0.0, 3.0, 100).unwrap();
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn report_pass_flag() {
        let r = ComparisonReport::new("m", "t", Statistic::Tv, 0.04, 0.05);
        assert!(r.pass);
        assert!(!ComparisonReport::new("m", "t", Statistic::Tv, 0.06, 0.05).pass);
        let n = ComparisonReport::negative_control("m", "t", Statistic::L1, 0.3, 1e-3);
        assert!(n.pass && n.value <= n.threshold);
    }
}
