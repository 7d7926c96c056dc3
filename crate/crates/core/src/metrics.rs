//! Summaries, grouped variance decomposition, histograms and the
//! Kolmogorov-Smirnov distance.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::graph::VertexAttributes;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("empty sample")]
    Empty,
    #[error("invalid histogram: {0}")]
    Histogram(String),
    #[error("value {value} outside [{lo}, {hi}]")]
    OutOfRange { value: f64, lo: f64, hi: f64 },
    #[error("{got} attributes for {want} values")]
    Dimension { got: usize, want: usize },
}

/// Population moments (variance divides by `n`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    pub variance: f64,
    pub min: f64,
    pub max: f64,
}

impl Summary {
    /// Standard error of the mean, using the unbiased variance.
    pub fn stderr(&self) -> f64 {
        if self.count < 2 {
            return f64::NAN;
        }
        let n = self.count as f64;
        (self.variance * n / (n - 1.0) / n).sqrt()
    }
}

pub fn summary(xs: &[f64]) -> Result<Summary, MetricsError> {
    if xs.is_empty() {
        return Err(MetricsError::Empty);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let variance = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let (min, max) = xs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    Ok(Summary { count: xs.len(), mean, variance, min, max })
}

/// How vertices are split into groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupRule {
    All,
    /// `q > 0` against `q <= 0`.
    SignQ,
    Stubborn,
    Tag,
}

impl GroupRule {
    pub fn key(&self, a: &VertexAttributes) -> String {
        match self {
            GroupRule::All => "all".into(),
            GroupRule::SignQ => if a.q > 0.0 { "q>0" } else { "q<=0" }.into(),
            GroupRule::Stubborn => format!("s={}", a.stubborn as u8),
            GroupRule::Tag => format!("tag={}", a.tag),
        }
    }
}

impl fmt::Display for GroupRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GroupRule::All => "all",
            GroupRule::SignQ => "sign_q",
            GroupRule::Stubborn => "s",
            GroupRule::Tag => "tag",
        })
    }
}

impl std::str::FromStr for GroupRule {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "all" | "none" => Ok(GroupRule::All),
            "sign_q" => Ok(GroupRule::SignQ),
            "s" => Ok(GroupRule::Stubborn),
            "tag" => Ok(GroupRule::Tag),
            _ => Err(format!("unknown grouping {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupedSummary {
    /// Groups in key order.
    pub groups: Vec<(String, Summary)>,
    pub total: Summary,
    /// `sum_g (n_g / n) (mean_g - mean)^2`.
    pub between: f64,
    /// `sum_g (n_g / n) var_g`.
    pub within: f64,
}

pub fn grouped_summary(
    xs: &[f64],
    attrs: &[VertexAttributes],
    rule: GroupRule,
) -> Result<GroupedSummary, MetricsError> {
    if xs.len() != attrs.len() {
        return Err(MetricsError::Dimension { got: attrs.len(), want: xs.len() });
    }
    let total = summary(xs)?;
    let mut parts: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (x, a) in xs.iter().zip(attrs) {
        parts.entry(rule.key(a)).or_default().push(*x);
    }
    let n = xs.len() as f64;
    let mut between = 0.0;
    let mut within = 0.0;
    let mut groups = Vec::new();
    for (k, v) in parts {
        let s = summary(&v)?;
        let share = s.count as f64 / n;
        between += share * (s.mean - total.mean) * (s.mean - total.mean);
        within += share * s.variance;
        groups.push((k, s));
    }
    Ok(GroupedSummary { groups, total, between, within })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn bin_edges(&self, b: usize) -> (f64, f64) {
        let w = (self.hi - self.lo) / self.counts.len() as f64;
        let lo = self.lo + w * b as f64;
        let hi = if b + 1 == self.counts.len() { self.hi } else { self.lo + w * (b + 1) as f64 };
        (lo, hi)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Equal-width bins over `[lo, hi]`; the last bin is closed on the right.
pub fn histogram(xs: &[f64], lo: f64, hi: f64, bins: usize) -> Result<Histogram, MetricsError> {
    if bins == 0 {
        return Err(MetricsError::Histogram("zero bins".into()));
    }
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(MetricsError::Histogram(format!("range [{lo}, {hi}]")));
    }
    let mut counts = vec![0u64; bins];
    let scale = bins as f64 / (hi - lo);
    for &x in xs {
        if !(lo..=hi).contains(&x) {
            return Err(MetricsError::OutOfRange { value: x, lo, hi });
        }
        let b = (((x - lo) * scale) as usize).min(bins - 1);
        counts[b] += 1;
    }
    Ok(Histogram { lo, hi, counts })
}

/// `sup_x |F_n(x) - G_m(x)|` between two empirical distributions.
pub fn ks_distance(xs: &[f64], ys: &[f64]) -> Result<f64, MetricsError> {
    if xs.is_empty() || ys.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut a = xs.to_vec();
    let mut b = ys.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut best: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        best = best.max((i as f64 / n - j as f64 / m).abs());
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn attr(q: f64) -> VertexAttributes {
        VertexAttributes { q, ..Default::default() }
    }

    #[test]
    fn summary_of_known_sample() {
        let s = summary(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(s.mean, 2.5);
        assert_eq!(s.variance, 1.25);
        assert_eq!((s.min, s.max), (1.0, 4.0));
        assert!(summary(&[]).is_err());
    }

    #[test]
    fn grouped_between_variance() {
        let xs = [0.9, 1.1, -0.9, -1.1];
        let at = [attr(1.0), attr(1.0), attr(-1.0), attr(-1.0)];
        let g = grouped_summary(&xs, &at, GroupRule::SignQ).unwrap();
        assert!((g.between - 1.0).abs() < 1e-15);
        assert!((g.within - 0.01).abs() < 1e-15);
        assert_eq!(g.groups[0].0, "q<=0");
    }

    #[test]
    fn histogram_edges() {
        let h = histogram(&[-1.0, 1.0, 0.0], -1.0, 1.0, 40).unwrap();
        assert_eq!(h.counts[0], 1);
        assert_eq!(h.counts[39], 1);
        assert_eq!(h.counts[20], 1);
        assert!(histogram(&[1.5], -1.0, 1.0, 4).is_err());
        assert!(histogram(&[0.0], 1.0, 1.0, 4).is_err());
        assert!(histogram(&[0.0], -1.0, 1.0, 0).is_err());
    }

    #[test]
    fn ks_of_shifted_samples() {
        let xs: Vec<f64> = (0..100).map(|i| i as f64).collect();
        assert_eq!(ks_distance(&xs, &xs).unwrap(), 0.0);
        let ys: Vec<f64> = (0..100).map(|i| i as f64 + 1000.0).collect();
        assert_eq!(ks_distance(&xs, &ys).unwrap(), 1.0);
        let zs: Vec<f64> = (0..100).map(|i| i as f64 + 10.0).collect();
        assert!((ks_distance(&xs, &zs).unwrap() - 0.1).abs() < 1e-12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn total_variance_decomposes(xs in prop::collection::vec(-1.0f64..1.0, 1..200), seed: u64) {
                let at: Vec<VertexAttributes> = xs
                    .iter()
                    .enumerate()
                    .map(|(i, _)| VertexAttributes { q: if (i as u64 ^ seed).is_multiple_of(3) { 0.5 } else { -0.5 }, stubborn: false, tag: (i % 4) as u32 })
                    .collect();
                for rule in [GroupRule::All, GroupRule::SignQ, GroupRule::Tag] {
                    let g = grouped_summary(&xs, &at, rule).unwrap();
                    prop_assert!((g.between + g.within - g.total.variance).abs() < 1e-12);
                }
            }

            #[test]
            fn histogram_counts_everything(xs in prop::collection::vec(-1.0f64..=1.0, 0..300), bins in 1usize..60) {
                let h = histogram(&xs, -1.0, 1.0, bins).unwrap();
                prop_assert_eq!(h.total(), xs.len() as u64);
            }

            #[test]
            fn ks_symmetric_and_bounded(xs in prop::collection::vec(-5.0f64..5.0, 1..100), ys in prop::collection::vec(-5.0f64..5.0, 1..100)) {
                let a = ks_distance(&xs, &ys).unwrap();
                let b = ks_distance(&ys, &xs).unwrap();
                prop_assert!((a - b).abs() < 1e-15);
                prop_assert!((0.0..=1.0).contains(&a));
            }
        }
    }
}
