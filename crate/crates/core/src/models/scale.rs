use serde::{Deserialize, Serialize};

/// Per-group z-scoring, `(x - mean) / std`. A group is a tabular column or a
/// series channel. Constant groups keep unit scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Consecutive cells sharing one group (series steps; 1 for tabular).
    pub run: usize,
}

impl Scaler {
    /// Fits on `rows` rows of width `groups * run`.
    pub fn fit(data: &[f64], rows: usize, groups: usize, run: usize) -> Self {
        let w = groups * run;
        let mut mean = vec![0.0; groups];
        let mut sq = vec![0.0; groups];
        for r in 0..rows {
            for (j, v) in data[r * w..(r + 1) * w].iter().enumerate() {
                mean[j / run] += v;
            }
        }
        let count = (rows * run).max(1) as f64;
        mean.iter_mut().for_each(|m| *m /= count);
        for r in 0..rows {
            for (j, v) in data[r * w..(r + 1) * w].iter().enumerate() {
                let d = v - mean[j / run];
                sq[j / run] += d * d;
            }
        }
        let std = sq
            .iter()
            .map(|s| {
                let sd = (s / count).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std, run }
    }

    pub fn width(&self) -> usize {
        self.mean.len() * self.run
    }

    pub fn apply(&self, data: &[f64]) -> Vec<f64> {
        let w = self.width();
        data.iter()
            .enumerate()
            .map(|(i, v)| {
                let g = (i % w) / self.run;
                (v - self.mean[g]) / self.std[g]
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn columns_standardised() {
        let data = [1.0, 10.0, 3.0, 10.0];
        let s = Scaler::fit(&data, 2, 2, 1);
        assert_eq!(s.apply(&data), vec![-1.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn series_channels_share_stats() {
        // one row, two channels of two steps
        let data = [0.0, 2.0, 5.0, 5.0];
        let s = Scaler::fit(&data, 1, 2, 2);
        assert_eq!(s.mean, vec![1.0, 5.0]);
        assert_eq!(s.std, vec![1.0, 1.0]);
    }
}
