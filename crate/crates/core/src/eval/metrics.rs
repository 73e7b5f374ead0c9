//! Classification metrics for binary labels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Metric {
    Auprc,
    Auroc,
    F1Macro,
    Specificity,
    Sensitivity,
}

impl Metric {
    /// Report column order.
    pub const ALL: [Metric; 5] = [
        Metric::Auprc,
        Metric::Auroc,
        Metric::F1Macro,
        Metric::Specificity,
        Metric::Sensitivity,
    ];

    pub fn header(self) -> &'static str {
        match self {
            Metric::Auprc => "AUPRC",
            Metric::Auroc => "AUROC",
            Metric::F1Macro => "F1 (macro)",
            Metric::Specificity => "Specificity",
            Metric::Sensitivity => "Sensitivity",
        }
    }

    pub fn needs_both_classes(self) -> bool {
        matches!(self, Metric::Auprc | Metric::Auroc)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub auprc: f64,
    pub auroc: f64,
    pub f1_macro: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub ci: Option<Vec<(Metric, Interval)>>,
}

impl MetricReport {
    pub fn get(&self, m: Metric) -> f64 {
        match m {
            Metric::Auprc => self.auprc,
            Metric::Auroc => self.auroc,
            Metric::F1Macro => self.f1_macro,
            Metric::Specificity => self.specificity,
            Metric::Sensitivity => self.sensitivity,
        }
    }

    pub fn interval(&self, m: Metric) -> Option<Interval> {
        self.ci.as_ref()?.iter().find(|(k, _)| *k == m).map(|(_, i)| *i)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ThresholdMetrics {
    pub f1_macro: f64,
    pub sensitivity: f64,
    pub specificity: f64,
}

fn check(probs: &[f64], labels: &[u8]) -> Result<()> {
    if probs.len() != labels.len() {
        return Err(Error::Metric(format!(
            "{} probabilities for {} labels",
            probs.len(),
            labels.len()
        )));
    }
    if probs.iter().any(|p| !p.is_finite()) {
        return Err(Error::Metric("non-finite probability".into()));
    }
    if labels.iter().any(|y| *y > 1) {
        return Err(Error::Metric("labels must be 0 or 1".into()));
    }
    Ok(())
}

fn class_counts(labels: &[u8]) -> (usize, usize) {
    let pos = labels.iter().filter(|y| **y == 1).count();
    (pos, labels.len() - pos)
}

fn both_classes(labels: &[u8]) -> Result<(usize, usize)> {
    let (pos, neg) = class_counts(labels);
    if pos == 0 || neg == 0 {
        return Err(Error::Metric(format!(
            "area metrics undefined with {pos} positives and {neg} negatives"
        )));
    }
    Ok((pos, neg))
}

/// Average ranks (1-based) with ties sharing the mean rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Mann–Whitney normalisation of the positive-class rank sum.
pub fn auroc(probs: &[f64], labels: &[u8]) -> Result<f64> {
    check(probs, labels)?;
    let (pos, neg) = both_classes(labels)?;
    let ranks = average_ranks(probs);
    let rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, y)| **y == 1).map(|(r, _)| r).sum();
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos as f64 * neg as f64))
}

/// Step-wise average precision: `Σ (R_k − R_{k−1}) P_k` over distinct
/// score thresholds, highest first.
pub fn auprc(probs: &[f64], labels: &[u8]) -> Result<f64> {
    check(probs, labels)?;
    let (pos, _) = both_classes(labels)?;
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    let mut i = 0;
    while i < order.len() {
        let t = probs[order[i]];
        while i < order.len() && probs[order[i]] == t {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let recall = tp as f64 / pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(ap)
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Predictions are positive when `p ≥ threshold`. A class whose F1
/// denominator is zero scores 0, as do sensitivity/specificity without
/// members of the relevant class.
pub fn threshold_metrics(probs: &[f64], labels: &[u8], threshold: f64) -> Result<ThresholdMetrics> {
    check(probs, labels)?;
    let (mut tp, mut fp, mut tn, mut fn_) = (0usize, 0usize, 0usize, 0usize);
    for (p, y) in probs.iter().zip(labels) {
        match (*p >= threshold, *y == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    let f1_pos = ratio(2 * tp, 2 * tp + fp + fn_);
    let f1_neg = ratio(2 * tn, 2 * tn + fn_ + fp);
    Ok(ThresholdMetrics {
        f1_macro: (f1_pos + f1_neg) / 2.0,
        sensitivity: ratio(tp, tp + fn_),
        specificity: ratio(tn, tn + fp),
    })
}

pub fn compute_metrics(probs: &[f64], labels: &[u8], threshold: f64) -> Result<MetricReport> {
    let t = threshold_metrics(probs, labels, threshold)?;
    Ok(MetricReport {
        auprc: auprc(probs, labels)?,
        auroc: auroc(probs, labels)?,
        f1_macro: t.f1_macro,
        sensitivity: t.sensitivity,
        specificity: t.specificity,
        ci: None,
    })
}

pub fn metric_value(m: Metric, probs: &[f64], labels: &[u8], threshold: f64) -> Result<f64> {
    Ok(match m {
        Metric::Auprc => auprc(probs, labels)?,
        Metric::Auroc => auroc(probs, labels)?,
        _ => {
            let t = threshold_metrics(probs, labels, threshold)?;
            match m {
                Metric::F1Macro => t.f1_macro,
                Metric::Sensitivity => t.sensitivity,
                _ => t.specificity,
            }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_ranking() {
        let r = compute_metrics(&[0.9, 0.8, 0.2, 0.1], &[1, 1, 0, 0], 0.5).unwrap();
        assert_eq!((r.auroc, r.auprc, r.sensitivity, r.specificity), (1.0, 1.0, 1.0, 1.0));
        assert_eq!(r.f1_macro, 1.0);
    }

    #[test]
    fn perfectly_wrong() {
        assert_eq!(auroc(&[0.6, 0.4], &[0, 1]).unwrap(), 0.0);
    }

    #[test]
    fn five_point_example() {
        let p = [0.7, 0.6, 0.55, 0.4, 0.3];
        let y = [1, 0, 1, 0, 0];
        assert!((auroc(&p, &y).unwrap() - 5.0 / 6.0).abs() < 1e-15);
        // thresholds: 0.7 → P=1,R=.5 ; 0.55 → P=2/3,R=1
        assert!((auprc(&p, &y).unwrap() - (0.5 + 0.5 * 2.0 / 3.0)).abs() < 1e-15);
    }

    #[test]
    fn ties_in_scores() {
        // all tied: AUROC 0.5, AP = prevalence
        let y = [1, 0, 0, 1, 0];
        assert_eq!(auroc(&[0.3; 5], &y).unwrap(), 0.5);
        assert!((auprc(&[0.3; 5], &y).unwrap() - 0.4).abs() < 1e-15);
    }

    #[test]
    fn single_class_area_error_but_threshold_ok() {
        assert!(compute_metrics(&[0.2, 0.7], &[1, 1], 0.5).is_err());
        let t = threshold_metrics(&[0.2, 0.7], &[1, 1], 0.5).unwrap();
        assert_eq!(t.sensitivity, 0.5);
        assert_eq!(t.specificity, 0.0);
    }

    #[test]
    fn threshold_is_inclusive() {
        let t = threshold_metrics(&[0.5, 0.49], &[1, 0], 0.5).unwrap();
        assert_eq!((t.sensitivity, t.specificity), (1.0, 1.0));
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }
}
