//! Summary statistics, efficiency diagnostics and Kolmogorov–Smirnov distances.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::numeric::neumaier_sum;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SummaryStats {
    pub n: u64,
    pub mean: f64,
    /// Unbiased sample variance.
    pub variance: f64,
    pub ci95_halfwidth: f64,
    pub cv: f64,
    pub min: f64,
    pub max: f64,
    pub seconds: Option<f64>,
}

impl SummaryStats {
    pub fn sd(&self) -> f64 {
        self.variance.sqrt()
    }

    pub fn ci(&self) -> (f64, f64) {
        (self.mean - self.ci95_halfwidth, self.mean + self.ci95_halfwidth)
    }

    pub fn overlaps(&self, other: &SummaryStats) -> bool {
        let (a0, a1) = self.ci();
        let (b0, b1) = other.ci();
        a0 <= b1 && b0 <= a1
    }

    /// `E[L^2] / E[L]^2` estimated from the sample.
    pub fn second_moment_ratio(&self) -> f64 {
        let n = self.n as f64;
        1.0 + self.cv * self.cv * (n - 1.0) / n
    }

    pub fn with_seconds(mut self, seconds: f64) -> Self {
        self.seconds = Some(seconds);
        self
    }
}

/// Streaming mean/variance (Welford), mergeable with Chan's update.
#[derive(Debug, Clone, Copy, Default)]
pub struct Accumulator {
    n: u64,
    mean: f64,
    m2: f64,
    min: f64,
    max: f64,
}

impl Accumulator {
    pub fn new() -> Self {
        Self {
            n: 0,
            mean: 0.0,
            m2: 0.0,
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
        }
    }

    /// `count` copies of `value`.
    pub fn constant(value: f64, count: u64) -> Self {
        if count == 0 {
            return Self::new();
        }
        Self {
            n: count,
            mean: value,
            m2: 0.0,
            min: value,
            max: value,
        }
    }

    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
        self.min = self.min.min(x);
        self.max = self.max.max(x);
    }

    pub fn merge(&mut self, other: &Accumulator) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let (na, nb) = (self.n as f64, other.n as f64);
        let n = na + nb;
        let d = other.mean - self.mean;
        self.mean += d * nb / n;
        self.m2 += other.m2 + d * d * na * nb / n;
        self.n += other.n;
        self.min = self.min.min(other.min);
        self.max = self.max.max(other.max);
    }

    pub fn summary(&self) -> Result<SummaryStats> {
        if self.n < 2 {
            return Err(Error::invalid(format!("summary needs at least 2 samples, got {}", self.n)));
        }
        Ok(finish(self.n, self.mean, self.m2 / (self.n - 1) as f64, self.min, self.max))
    }
}

fn finish(n: u64, mean: f64, variance: f64, min: f64, max: f64) -> SummaryStats {
    let variance = variance.max(0.0);
    let sd = variance.sqrt();
    let cv = if mean != 0.0 { sd / mean.abs() } else if sd == 0.0 { 0.0 } else { f64::INFINITY };
    SummaryStats {
        n,
        mean: mean.clamp(min, max),
        variance,
        ci95_halfwidth: 1.96 * (variance / n as f64).sqrt(),
        cv,
        min,
        max,
        seconds: None,
    }
}

/// Two-pass compensated summary.
pub fn summarize(samples: &[f64]) -> Result<SummaryStats> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::invalid(format!("summary needs at least 2 samples, got {n}")));
    }
    let mean = neumaier_sum(samples.iter().copied()) / n as f64;
    let ss = neumaier_sum(samples.iter().map(|x| (x - mean) * (x - mean)));
    let min = samples.iter().copied().fold(f64::INFINITY, f64::min);
    let max = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(finish(n as u64, mean, ss / (n - 1) as f64, min, max))
}

#[derive(Debug, Clone, Serialize)]
pub struct EfficiencyRow {
    pub x_log10: f64,
    pub second_moment_ratio: f64,
    pub mean_over_asymptote: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EfficiencyReport {
    pub rows: Vec<EfficiencyRow>,
    /// max/min of the second-moment ratio across the grid.
    pub spread: f64,
    pub flagged: bool,
}

pub const EFFICIENCY_SPREAD_LIMIT: f64 = 4.0;

/// Per-x second-moment ratios `E L^2 / (E L)^2` and `mean / asymptote`; flags
/// the grid when the second-moment ratio varies by more than a factor of 4.
pub fn efficiency_report(per_x: &[(f64, SummaryStats)], asymptotes: &[f64]) -> EfficiencyReport {
    let rows: Vec<EfficiencyRow> = per_x
        .iter()
        .zip(asymptotes.iter().copied().chain(std::iter::repeat(f64::NAN)))
        .map(|((x_log10, s), a)| EfficiencyRow {
            x_log10: *x_log10,
            second_moment_ratio: s.second_moment_ratio(),
            mean_over_asymptote: s.mean / a,
        })
        .collect();
    let max = rows.iter().map(|r| r.second_moment_ratio).fold(f64::NEG_INFINITY, f64::max);
    let min = rows.iter().map(|r| r.second_moment_ratio).fold(f64::INFINITY, f64::min);
    let spread = if rows.is_empty() { 1.0 } else if min > 0.0 { max / min } else { f64::INFINITY };
    EfficiencyReport {
        rows,
        spread,
        flagged: !(spread <= EFFICIENCY_SPREAD_LIMIT),
    }
}

/// One-sample KS distance against a CDF that may have atoms: compares the
/// empirical CDF with both `F(x-)` (via `cdf_left`) and `F(x)`.
pub fn ks_one_sample<F, G>(samples: &[f64], cdf: F, cdf_left: G) -> f64
where
    F: Fn(f64) -> f64,
    G: Fn(f64) -> f64,
{
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    let mut i = 0;
    while i < xs.len() {
        let x = xs[i];
        let mut j = i;
        while j < xs.len() && xs[j] == x {
            j += 1;
        }
        let below = i as f64 / n;
        let upto = j as f64 / n;
        d = d.max((cdf_left(x) - below).abs()).max((cdf(x) - upto).abs());
        i = j;
    }
    d
}

/// KS distance of a weighted sample (self-normalized) against a continuous CDF.
pub fn ks_weighted<F: Fn(f64) -> f64>(samples: &[(f64, f64)], cdf: F) -> f64 {
    let mut xs: Vec<(f64, f64)> = samples.iter().copied().filter(|p| p.1 > 0.0).collect();
    xs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total = neumaier_sum(xs.iter().map(|p| p.1));
    if !(total > 0.0) {
        return 1.0;
    }
    let mut acc = 0.0;
    let mut d: f64 = 0.0;
    for (x, w) in xs {
        let f = cdf(x);
        d = d.max((f - acc / total).abs());
        acc += w;
        d = d.max((f - acc / total).abs());
    }
    d
}

/// Two-sample KS statistic.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut xa = a.to_vec();
    let mut xb = b.to_vec();
    xa.sort_by(f64::total_cmp);
    xb.sort_by(f64::total_cmp);
    let (na, nb) = (xa.len() as f64, xb.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < xa.len() && j < xb.len() {
        let x = xa[i].min(xb[j]);
        while i < xa.len() && xa[i] <= x {
            i += 1;
        }
        while j < xb.len() && xb[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Asymptotic 1% critical value of the two-sample KS statistic.
pub fn ks_critical_two_sample_1pct(na: usize, nb: usize) -> f64 {
    let (na, nb) = (na as f64, nb as f64);
    1.628 * ((na + nb) / (na * nb)).sqrt()
}

/// Asymptotic 1% critical value of the one-sample KS statistic.
pub fn ks_critical_one_sample_1pct(n: usize) -> f64 {
    1.628 / (n as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_examples() {
        let s = summarize(&[1.0, 1.0, 1.0]).unwrap();
        assert_eq!((s.mean, s.variance, s.cv), (1.0, 0.0, 0.0));
        let s = summarize(&[0.0, 2.0]).unwrap();
        assert_eq!(s.mean, 1.0);
        assert_eq!(s.variance, 2.0);
        assert!((s.cv - 2f64.sqrt()).abs() < 1e-15);
        assert!((s.ci95_halfwidth - 1.96).abs() < 1e-15);
        assert!(summarize(&[1.0]).is_err());
    }

    #[test]
    fn efficiency_flags() {
        let s = summarize(&[1.0, 2.0, 3.0]).unwrap();
        let r = efficiency_report(&[(8.0, s), (16.0, s)], &[1.0, 1.0]);
        assert_eq!(r.spread, 1.0);
        assert!(!r.flagged);
        let wild = summarize(&[0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 100.0]).unwrap();
        let r = efficiency_report(&[(8.0, s), (16.0, wild)], &[1.0, 1.0]);
        assert!(r.flagged);
    }

    #[test]
    fn ks_basics() {
        let a: Vec<f64> = (0..1000).map(|i| (i as f64 + 0.5) / 1000.0).collect();
        assert!(ks_one_sample(&a, |x| x.clamp(0.0, 1.0), |x| x.clamp(0.0, 1.0)) <= 5e-4 + 1e-12);
        assert_eq!(ks_two_sample(&a, &a), 0.0);
        let shifted: Vec<f64> = a.iter().map(|x| x + 0.5).collect();
        assert!((ks_two_sample(&a, &shifted) - 0.5).abs() <= 2e-3);
        // a point mass at 0 evaluated against its own CDF
        let zeros = vec![0.0; 10];
        let step = |x: f64| if x >= 0.0 { 1.0 } else { 0.0 };
        let step_left = |x: f64| if x > 0.0 { 1.0 } else { 0.0 };
        assert_eq!(ks_one_sample(&zeros, step, step_left), 0.0);
        let w: Vec<(f64, f64)> = a.iter().map(|&x| (x, 1.0)).collect();
        assert!(ks_weighted(&w, |x| x) <= 1e-3 + 1e-12);
    }

    proptest! {
        #[test]
        fn merge_consistent_and_permutation_invariant(
            a in prop::collection::vec(-1e3f64..1e3, 2..200),
            b in prop::collection::vec(-1e3f64..1e3, 2..200),
        ) {
            let mut all = a.clone();
            all.extend_from_slice(&b);
            let whole = summarize(&all).unwrap();
            let mut acc_a = Accumulator::new();
            a.iter().for_each(|&x| acc_a.push(x));
            let mut acc_b = Accumulator::new();
            b.iter().for_each(|&x| acc_b.push(x));
            acc_a.merge(&acc_b);
            let merged = acc_a.summary().unwrap();
            let scale = whole.mean.abs().max(whole.sd()).max(1e-300);
            prop_assert!((merged.mean - whole.mean).abs() <= 1e-12 * scale);
            prop_assert!((merged.variance - whole.variance).abs() <= 1e-12 * whole.variance.max(1e-300) + 1e-9);
            let mut rev = all.clone();
            rev.reverse();
            let r = summarize(&rev).unwrap();
            prop_assert!((r.mean - whole.mean).abs() <= 1e-12 * scale);
            prop_assert!(whole.min <= whole.mean && whole.mean <= whole.max);
            prop_assert!(whole.cv >= 0.0 && whole.ci95_halfwidth >= 0.0);
        }
    }
}
