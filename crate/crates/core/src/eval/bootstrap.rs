//! Percentile bootstrap confidence intervals.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{metric_value, Interval, Metric, DEFAULT_THRESHOLD};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCi {
    pub interval: Interval,
    /// Single-class resamples that were drawn again.
    pub redrawn: usize,
    /// Metric value on every accepted resample, in draw order.
    pub samples: Vec<f64>,
}

/// Linear-interpolation quantile of sorted data (`q` in `[0, 1]`).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Index lists of `b` stratification-free resamples with replacement,
/// skipping single-class draws. Shared so several metrics can be computed on
/// the same replicates.
pub fn resample_indices(labels: &[u8], b: usize, seed: u64) -> Result<(Vec<Vec<usize>>, usize)> {
    let n = labels.len();
    if n < 10 {
        return Err(Error::Metric(format!("bootstrap needs n ≥ 10, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(b);
    let mut redrawn = 0usize;
    while out.len() < b {
        let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
        let pos = idx.iter().filter(|i| labels[**i] == 1).count();
        if pos == 0 || pos == n {
            redrawn += 1;
            if redrawn * 2 > b {
                return Err(Error::Metric(format!(
                    "more than half of {b} bootstrap resamples were single-class"
                )));
            }
            continue;
        }
        out.push(idx);
    }
    Ok((out, redrawn))
}

pub fn bootstrap_ci(probs: &[f64], labels: &[u8], metric: Metric, b: usize, alpha: f64, seed: u64) -> Result<BootstrapCi> {
    if b == 0 || !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!("bootstrap needs B ≥ 1 and α in (0,1), got B={b}, α={alpha}")));
    }
    if probs.len() != labels.len() {
        return Err(Error::Metric("probabilities and labels differ in length".into()));
    }
    let (draws, redrawn) = resample_indices(labels, b, seed)?;
    let mut samples = Vec::with_capacity(b);
    let mut p = Vec::with_capacity(labels.len());
    let mut y = Vec::with_capacity(labels.len());
    for idx in &draws {
        p.clear();
        y.clear();
        p.extend(idx.iter().map(|i| probs[*i]));
        y.extend(idx.iter().map(|i| labels[*i]));
        samples.push(metric_value(metric, &p, &y, DEFAULT_THRESHOLD)?);
    }
    let mut sorted = samples.clone();
    sorted.sort_by(f64::total_cmp);
    Ok(BootstrapCi {
        interval: Interval {
            lower: quantile_sorted(&sorted, alpha / 2.0),
            upper: quantile_sorted(&sorted, 1.0 - alpha / 2.0),
        },
        redrawn,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles_interpolate() {
        let s = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&s, 0.0), 1.0);
        assert_eq!(quantile_sorted(&s, 1.0), 4.0);
        assert!((quantile_sorted(&s, 0.5) - 2.5).abs() < 1e-15);
    }

    #[test]
    fn perfect_separation_gives_degenerate_interval() {
        let y: Vec<u8> = (0..20).map(|i| (i % 2) as u8).collect();
        let p: Vec<f64> = y.iter().map(|v| *v as f64 * 0.8 + 0.1).collect();
        let ci = bootstrap_ci(&p, &y, Metric::Auroc, 500, 0.05, 1).unwrap();
        assert_eq!(ci.interval, Interval { lower: 1.0, upper: 1.0 });
    }

    #[test]
    fn seeded_reproducible_and_small_n_rejected() {
        let y: Vec<u8> = (0..30).map(|i| (i % 3 == 0) as u8).collect();
        let p: Vec<f64> = (0..30).map(|i| ((i * 37) % 30) as f64 / 30.0).collect();
        let a = bootstrap_ci(&p, &y, Metric::Auprc, 300, 0.05, 4).unwrap();
        let b = bootstrap_ci(&p, &y, Metric::Auprc, 300, 0.05, 4).unwrap();
        assert_eq!(a, b);
        assert!(bootstrap_ci(&p[..5], &y[..5], Metric::Auroc, 10, 0.05, 0).is_err());
    }

    #[test]
    fn mostly_single_class_errors() {
        let y = vec![0u8; 40];
        let p = vec![0.5; 40];
        assert!(bootstrap_ci(&p, &y, Metric::Auroc, 200, 0.05, 0).is_err());
    }
}
