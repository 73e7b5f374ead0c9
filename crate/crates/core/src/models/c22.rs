//! Per-channel summary features for short series, fed to a tabular
//! estimator. An 8-feature subset of the catch22 family.

use serde::{Deserialize, Serialize};

use super::linear::LogReg;
use super::tree::Forest;
use super::{C22Estimator, Penalty};
use crate::error::Result;

pub const FEATURE_NAMES: [&str; 8] = [
    "mean",
    "std",
    "longest_streak_above_mean",
    "acf_first_zero",
    "hist_mode_5",
    "slope",
    "prop_above_mean",
    "last_minus_first",
];

/// Depth cap standing in for "grow until pure" in the 200-tree forest.
const UNBOUNDED_DEPTH: usize = 64;

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

pub fn std(x: &[f64]) -> f64 {
    let m = mean(x);
    (x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / x.len() as f64).sqrt()
}

pub fn longest_streak_above_mean(x: &[f64]) -> f64 {
    let m = mean(x);
    let (mut best, mut run) = (0usize, 0usize);
    for v in x {
        if *v > m {
            run += 1;
            best = best.max(run);
        } else {
            run = 0;
        }
    }
    best as f64
}

/// First lag at which the autocorrelation is ≤ 0; the series length when
/// it never crosses (including constant series).
pub fn acf_first_zero(x: &[f64]) -> f64 {
    let n = x.len();
    let m = mean(x);
    let var: f64 = x.iter().map(|v| (v - m) * (v - m)).sum();
    if var == 0.0 {
        return n as f64;
    }
    for lag in 1..n {
        let c: f64 = (0..n - lag).map(|i| (x[i] - m) * (x[i + lag] - m)).sum();
        if c / var <= 0.0 {
            return lag as f64;
        }
    }
    n as f64
}

/// Centre of the most populated of 5 equal-width bins over the z-scored
/// series (first bin wins ties); 0 for constant series.
pub fn hist_mode_5(x: &[f64]) -> f64 {
    let s = std(x);
    if s == 0.0 {
        return 0.0;
    }
    let m = mean(x);
    let z: Vec<f64> = x.iter().map(|v| (v - m) / s).collect();
    let lo = z.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w = (hi - lo) / 5.0;
    let mut counts = [0usize; 5];
    for v in &z {
        let b = (((v - lo) / w) as usize).min(4);
        counts[b] += 1;
    }
    let best = (0..5).fold(0, |b, i| if counts[i] > counts[b] { i } else { b });
    lo + w * (best as f64 + 0.5)
}

/// Least-squares slope against `t = 0, 1, …`.
pub fn slope(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let tm = (n - 1.0) / 2.0;
    let m = mean(x);
    let num: f64 = x.iter().enumerate().map(|(t, v)| (t as f64 - tm) * (v - m)).sum();
    let den: f64 = (0..x.len()).map(|t| (t as f64 - tm).powi(2)).sum();
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

pub fn prop_above_mean(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().filter(|v| **v > m).count() as f64 / x.len() as f64
}

pub fn last_minus_first(x: &[f64]) -> f64 {
    x[x.len() - 1] - x[0]
}

pub fn features(x: &[f64]) -> [f64; 8] {
    [
        mean(x),
        std(x),
        longest_streak_above_mean(x),
        acf_first_zero(x),
        hist_mode_5(x),
        slope(x),
        prop_above_mean(x),
        last_minus_first(x),
    ]
}

/// `[n × channels·8]` feature table from `[n × channels × steps]` series.
pub fn transform(x: &[f64], n: usize, channels: usize, steps: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n * channels * 8);
    for i in 0..n {
        for c in 0..channels {
            let s = &x[(i * channels + c) * steps..(i * channels + c + 1) * steps];
            out.extend(features(s));
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Head {
    Trees(Forest),
    Logreg(LogReg),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct C22Model {
    pub channels: usize,
    pub steps: usize,
    pub head: Head,
}

impl C22Model {
    pub fn fit(x: &[f64], n: usize, channels: usize, steps: usize, y: &[u8], estimator: C22Estimator, seed: u64) -> Result<Self> {
        let f = transform(x, n, channels, steps);
        let d = channels * 8;
        let head = match estimator {
            C22Estimator::Rforest => Head::Trees(Forest::fit_rf(&f, n, d, y, 200, UNBOUNDED_DEPTH, seed)?),
            C22Estimator::Gbt => Head::Trees(Forest::fit_gbt(&f, n, d, y, 200, 3, seed)?),
            C22Estimator::Logreg => Head::Logreg(LogReg::fit(&f, n, d, y, 1.0, Penalty::L2)?),
        };
        Ok(Self { channels, steps, head })
    }

    pub fn predict(&self, x: &[f64], n: usize, channels: usize, steps: usize) -> Result<Vec<f64>> {
        if channels != self.channels || steps != self.steps {
            return Err(crate::error::Error::Inference(format!(
                "c22features fitted on {}×{} series, got {channels}×{steps}",
                self.channels, self.steps
            )));
        }
        let f = transform(x, n, channels, steps);
        let d = channels * 8;
        match &self.head {
            Head::Trees(t) => t.predict(&f, n, d),
            Head::Logreg(l) => l.predict(&f, n, d),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_values() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        assert_eq!(mean(&x), 3.5);
        assert_eq!(slope(&x), 1.0);
        assert_eq!(last_minus_first(&x), 5.0);
        assert_eq!(prop_above_mean(&x), 0.5);
        assert_eq!(longest_streak_above_mean(&x), 3.0);
        assert!((std(&x) - (35.0f64 / 12.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn acf_crossing() {
        // alternating series: lag-1 autocorrelation is negative
        assert_eq!(acf_first_zero(&[1.0, -1.0, 1.0, -1.0]), 1.0);
        assert_eq!(acf_first_zero(&[2.0; 5]), 5.0);
    }

    #[test]
    fn histogram_mode_picks_dense_bin() {
        let x = [0.0, 0.0, 0.0, 0.0, 10.0];
        // z-scores: four at -0.5, one at 2.0; the first bin is the mode
        let h = hist_mode_5(&x);
        assert!((h - (-0.5 + 0.25)).abs() < 1e-12, "{h}");
    }

    #[test]
    fn constant_series_are_finite() {
        assert!(features(&[-1.0; 6]).iter().all(|v| v.is_finite()));
    }
}
