//! Friedman test, Nemenyi post-hoc comparisons and critical-difference data.

use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, ChiSquared, Normal};

use super::metrics::average_ranks;
use crate::error::{Error, Result};

/// Upper quantiles of the studentized range with infinite degrees of
/// freedom, `q_α(k, ∞)` for k = 2..=20. Values agree with the standard
/// Harter tables (and with Demšar's Nemenyi constants times √2).
pub const Q_05: [f64; 19] = [
    2.772, 3.314, 3.633, 3.858, 4.030, 4.170, 4.286, 4.387, 4.474, 4.552, 4.622, 4.685, 4.743,
    4.796, 4.845, 4.891, 4.934, 4.974, 5.012,
];
pub const Q_10: [f64; 19] = [
    2.326, 2.902, 3.240, 3.478, 3.661, 3.808, 3.931, 4.037, 4.129, 4.211, 4.285, 4.351, 4.412,
    4.468, 4.519, 4.568, 4.612, 4.654, 4.694,
];

pub fn q_alpha(k: usize, alpha: f64) -> Result<f64> {
    if !(2..=20).contains(&k) {
        return Err(Error::Config(format!("studentized range table covers k = 2..=20, got {k}")));
    }
    let table = if (alpha - 0.05).abs() < 1e-12 {
        &Q_05
    } else if (alpha - 0.10).abs() < 1e-12 {
        &Q_10
    } else {
        return Err(Error::Config(format!("studentized range table has α ∈ {{0.05, 0.1}}, got {alpha}")));
    };
    Ok(table[k - 2])
}

/// Scores `[N blocks × k classifiers]` and their within-block ranks, rank 1
/// being the highest score.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankMatrix {
    pub n_blocks: usize,
    pub k: usize,
    pub scores: Vec<f64>,
    pub ranks: Vec<f64>,
}

impl RankMatrix {
    pub fn new(scores: Vec<Vec<f64>>) -> Result<Self> {
        let n_blocks = scores.len();
        let k = scores.first().map_or(0, Vec::len);
        if n_blocks < 2 || k < 3 {
            return Err(Error::Config(format!(
                "rank statistics need N ≥ 2 blocks and k ≥ 3 classifiers, got N={n_blocks}, k={k}"
            )));
        }
        if scores.iter().any(|r| r.len() != k || r.iter().any(|v| !v.is_finite())) {
            return Err(Error::Config("ragged or non-finite score matrix".into()));
        }
        let mut ranks = Vec::with_capacity(n_blocks * k);
        for row in &scores {
            let neg: Vec<f64> = row.iter().map(|v| -v).collect();
            ranks.extend(average_ranks(&neg));
        }
        Ok(Self {
            n_blocks,
            k,
            scores: scores.concat(),
            ranks,
        })
    }

    pub fn row_ranks(&self, b: usize) -> &[f64] {
        &self.ranks[b * self.k..(b + 1) * self.k]
    }

    pub fn mean_ranks(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.k];
        for b in 0..self.n_blocks {
            for (j, r) in self.row_ranks(b).iter().enumerate() {
                m[j] += r;
            }
        }
        m.iter_mut().for_each(|v| *v /= self.n_blocks as f64);
        m
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Friedman {
    pub chi2: f64,
    pub p_value: f64,
    pub df: usize,
}

/// Friedman χ² in rank-sum form with the usual tie correction
/// `1 − Σ(t³ − t) / (N k (k² − 1))`.
pub fn friedman_test(r: &RankMatrix) -> Result<Friedman> {
    let (n, k) = (r.n_blocks as f64, r.k as f64);
    let sums: Vec<f64> = r.mean_ranks().iter().map(|m| m * n).collect();
    let ss: f64 = sums.iter().map(|s| s * s).sum();
    let raw = 12.0 / (n * k * (k + 1.0)) * ss - 3.0 * n * (k + 1.0);
    let mut ties = 0.0;
    for b in 0..r.n_blocks {
        let mut row = r.row_ranks(b).to_vec();
        row.sort_by(f64::total_cmp);
        let mut i = 0;
        while i < row.len() {
            let mut j = i;
            while j + 1 < row.len() && row[j + 1] == row[i] {
                j += 1;
            }
            let t = (j - i + 1) as f64;
            ties += t * t * t - t;
            i = j + 1;
        }
    }
    let correction = 1.0 - ties / (n * k * (k * k - 1.0));
    let df = r.k - 1;
    if correction <= 1e-12 {
        return Ok(Friedman { chi2: 0.0, p_value: 1.0, df });
    }
    let chi2 = (raw / correction).max(0.0);
    let dist = ChiSquared::new(df as f64).map_err(|e| Error::Metric(e.to_string()))?;
    Ok(Friedman {
        chi2,
        p_value: dist.sf(chi2),
        df,
    })
}

/// `P(Q ≤ q)` for the studentized range of `k` standard normals with
/// infinite degrees of freedom:
/// `∫ k φ(z) [Φ(z) − Φ(z − q)]^{k−1} dz`, integrated by composite Simpson.
pub fn ptukey_inf(q: f64, k: usize) -> f64 {
    if q <= 0.0 {
        return 0.0;
    }
    let nd = Normal::standard();
    let (lo, hi) = (-9.0, 9.0 + q);
    let steps = 4000usize;
    let h = (hi - lo) / steps as f64;
    let f = |z: f64| k as f64 * nd.pdf(z) * (nd.cdf(z) - nd.cdf(z - q)).max(0.0).powi(k as i32 - 1);
    let mut acc = f(lo) + f(hi);
    for i in 1..steps {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(lo + i as f64 * h);
    }
    (acc * h / 3.0).clamp(0.0, 1.0)
}

/// Standard error scale of mean-rank differences: `sqrt(k(k+1)/(12N))`.
pub fn rank_se(k: usize, n_blocks: usize) -> f64 {
    ((k * (k + 1)) as f64 / (12.0 * n_blocks as f64)).sqrt()
}

pub fn critical_difference(k: usize, n_blocks: usize, alpha: f64) -> Result<f64> {
    if n_blocks == 0 {
        return Err(Error::Config("critical difference needs N ≥ 1".into()));
    }
    Ok(q_alpha(k, alpha)? * rank_se(k, n_blocks))
}

/// Pairwise Nemenyi p-values (symmetric, unit diagonal).
pub fn nemenyi_posthoc(r: &RankMatrix) -> Vec<Vec<f64>> {
    let mean = r.mean_ranks();
    let se = rank_se(r.k, r.n_blocks);
    let mut p = vec![vec![1.0; r.k]; r.k];
    for i in 0..r.k {
        for j in i + 1..r.k {
            let q = (mean[i] - mean[j]).abs() / se;
            let v = 1.0 - ptukey_inf(q, r.k);
            p[i][j] = v.clamp(0.0, 1.0);
            p[j][i] = p[i][j];
        }
    }
    p
}

/// Significance by the rank gap: `|ΔR| ≥ CD`.
pub fn significant(gap: f64, cd: f64) -> bool {
    gap >= cd
}

/// Plot-ready critical-difference data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CdDiagram {
    pub names: Vec<String>,
    /// Mean ranks, ascending (best first).
    pub mean_ranks: Vec<f64>,
    pub cd: f64,
    /// Index ranges `[start, end]` into the sorted order.
    pub cliques: Vec<(usize, usize)>,
}

/// Maximal runs of sorted mean ranks whose end-to-end gap is `< cd`.
pub fn cd_cliques(sorted_ranks: &[f64], cd: f64) -> Vec<(usize, usize)> {
    let n = sorted_ranks.len();
    let mut out: Vec<(usize, usize)> = Vec::new();
    for i in 0..n {
        let mut j = i;
        while j + 1 < n && sorted_ranks[j + 1] - sorted_ranks[i] < cd {
            j += 1;
        }
        if out.last().is_none_or(|&(_, e)| j > e) {
            out.push((i, j));
        }
    }
    out
}

pub fn cd_diagram_data(names: &[String], mean_ranks: &[f64], cd: f64) -> CdDiagram {
    let mut order: Vec<usize> = (0..mean_ranks.len()).collect();
    order.sort_by(|&a, &b| mean_ranks[a].total_cmp(&mean_ranks[b]).then(a.cmp(&b)));
    let sorted: Vec<f64> = order.iter().map(|&i| mean_ranks[i]).collect();
    CdDiagram {
        names: order.iter().map(|&i| names[i].clone()).collect(),
        cliques: cd_cliques(&sorted, cd),
        mean_ranks: sorted,
        cd,
    }
}
