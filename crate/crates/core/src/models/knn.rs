//! k-nearest neighbours on z-scored features.

use serde::{Deserialize, Serialize};

use super::scale::Scaler;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Knn {
    pub k: usize,
    pub scaler: Scaler,
    pub points: Vec<f64>,
    pub labels: Vec<u8>,
    pub dim: usize,
}

impl Knn {
    pub fn fit(x: &[f64], n: usize, d: usize, y: &[u8], k: usize) -> Result<Self> {
        if k > n {
            return Err(Error::Fit(format!("knn: k = {k} exceeds {n} training rows")));
        }
        let scaler = Scaler::fit(x, n, d, 1);
        Ok(Self {
            k,
            points: scaler.apply(x),
            scaler,
            labels: y.to_vec(),
            dim: d,
        })
    }

    /// Distance-weighted vote of the `k` nearest training points (weights
    /// `1/d`). Exact matches take the whole vote.
    pub fn predict(&self, x: &[f64], n: usize, d: usize) -> Result<Vec<f64>> {
        if d != self.dim {
            return Err(Error::Inference(format!("knn fitted on {} features, got {d}", self.dim)));
        }
        let q = self.scaler.apply(x);
        let m = self.labels.len();
        let mut dist: Vec<(f64, usize)> = Vec::with_capacity(m);
        let mut out = Vec::with_capacity(n);
        for r in 0..n {
            let row = &q[r * d..(r + 1) * d];
            dist.clear();
            for j in 0..m {
                let p = &self.points[j * d..(j + 1) * d];
                let s: f64 = row.iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum();
                dist.push((s.sqrt(), j));
            }
            dist.select_nth_unstable_by(self.k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let near = &dist[..self.k];
            let exact: Vec<_> = near.iter().filter(|(s, _)| *s == 0.0).collect();
            let p = if !exact.is_empty() {
                exact.iter().map(|(_, j)| self.labels[*j] as f64).sum::<f64>() / exact.len() as f64
            } else {
                let (mut num, mut den) = (0.0, 0.0);
                for (s, j) in near {
                    num += self.labels[*j] as f64 / s;
                    den += 1.0 / s;
                }
                num / den
            };
            out.push(p);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_neighbour_memorises() {
        let x = [0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.5, 0.2];
        let y = [0, 1, 1, 0, 1];
        let m = Knn::fit(&x, 5, 2, &y, 1).unwrap();
        let p = m.predict(&x, 5, 2).unwrap();
        assert_eq!(p, vec![0.0, 1.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn k_larger_than_n_rejected() {
        assert!(Knn::fit(&[0.0, 1.0], 2, 1, &[0, 1], 3).is_err());
    }
}
