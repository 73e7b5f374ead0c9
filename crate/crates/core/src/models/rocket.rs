//! Random convolutional kernels with PPV/max pooling and a ridge classifier
//! whose penalty is chosen by exact leave-one-out error.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::linear::sigmoid;
use super::scale::Scaler;
use crate::error::{Error, Result};

const LENGTHS: [usize; 3] = [7, 9, 11];

/// `logspace(-3, 3, 10)`.
pub fn ridge_alphas() -> Vec<f64> {
    (0..10).map(|i| 10f64.powf(-3.0 + 6.0 * i as f64 / 9.0)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    pub length: usize,
    pub dilation: usize,
    pub padding: usize,
    pub bias: f64,
    pub channels: Vec<usize>,
    /// `[channels.len() × length]`, each channel's weights mean-centred.
    pub weights: Vec<f64>,
}

impl Kernel {
    fn random(rng: &mut ChaCha8Rng, n_channels: usize, steps: usize) -> Self {
        let length = LENGTHS[rng.random_range(0..LENGTHS.len())];
        let max_ch = n_channels.min(length) as f64;
        let n_ch = (2f64.powf(rng.random_range(0.0..(max_ch + 1.0).log2())) as usize).clamp(1, n_channels);
        let channels = rand::seq::index::sample(rng, n_channels, n_ch).into_vec();
        let mut weights = Vec::with_capacity(n_ch * length);
        for _ in 0..n_ch {
            let w: Vec<f64> = (0..length).map(|_| StandardNormal.sample(rng)).collect();
            let mean = w.iter().sum::<f64>() / length as f64;
            weights.extend(w.iter().map(|v| v - mean));
        }
        let bias = rng.random_range(-1.0..1.0);
        let span = (steps.saturating_sub(1)) as f64 / (length - 1) as f64;
        let dilation = if span > 1.0 {
            (2f64.powf(rng.random_range(0.0..span.log2())) as usize).max(1)
        } else {
            1
        };
        let padding = if rng.random_bool(0.5) {
            (length - 1) * dilation / 2
        } else {
            0
        };
        Self {
            length,
            dilation,
            padding,
            bias,
            channels,
            weights,
        }
    }

    /// Number of output positions; zero means the kernel does not fit.
    pub fn output_len(&self, steps: usize) -> usize {
        (steps + 2 * self.padding).saturating_sub((self.length - 1) * self.dilation)
    }

    /// `(ppv, max)` over the convolution of one `[channels × steps]` series.
    pub fn apply(&self, series: &[f64], steps: usize) -> (f64, f64) {
        let out = self.output_len(steps);
        let mut pos = 0usize;
        let mut mx = f64::NEG_INFINITY;
        for o in 0..out {
            let mut s = self.bias;
            for (ci, &c) in self.channels.iter().enumerate() {
                let w = &self.weights[ci * self.length..(ci + 1) * self.length];
                for (k, wk) in w.iter().enumerate() {
                    let t = (o + k * self.dilation) as isize - self.padding as isize;
                    if t >= 0 && (t as usize) < steps {
                        s += wk * series[c * steps + t as usize];
                    }
                }
            }
            if s > 0.0 {
                pos += 1;
            }
            mx = mx.max(s);
        }
        (pos as f64 / out as f64, mx)
    }
}

/// Ridge regression on `±1` targets with intercept; returns
/// `(weights, intercept, alpha)` for the alpha with the smallest
/// leave-one-out squared error.
pub fn ridge_loo(x: &DMatrix<f64>, y: &[f64], alphas: &[f64]) -> (DVector<f64>, f64, f64) {
    let (n, p) = x.shape();
    let xm = DVector::from_iterator(p, (0..p).map(|j| x.column(j).mean()));
    let ym = y.iter().sum::<f64>() / n as f64;
    let mut xc = x.clone();
    for j in 0..p {
        xc.column_mut(j).add_scalar_mut(-xm[j]);
    }
    let yc = DVector::from_iterator(n, y.iter().map(|v| v - ym));
    let mut best = (f64::INFINITY, alphas[0]);
    let w = if p < n {
        let eig = SymmetricEigen::new(xc.transpose() * &xc);
        let u = &xc * &eig.eigenvectors;
        let uty = u.transpose() * &yc;
        for &a in alphas {
            let mut err = 0.0;
            for i in 0..n {
                let (mut fit, mut h) = (0.0, 0.0);
                for k in 0..p {
                    let s = 1.0 / (eig.eigenvalues[k].max(0.0) + a);
                    fit += u[(i, k)] * s * uty[k];
                    h += u[(i, k)] * u[(i, k)] * s;
                }
                let e = (yc[i] - fit) / (1.0 - h).max(1e-12);
                err += e * e;
            }
            if err < best.0 {
                best = (err, a);
            }
        }
        let a = best.1;
        let scaled = DVector::from_iterator(p, (0..p).map(|k| uty[k] / (eig.eigenvalues[k].max(0.0) + a)));
        &eig.eigenvectors * scaled
    } else {
        let eig = SymmetricEigen::new(&xc * xc.transpose());
        let q = &eig.eigenvectors;
        let qty = q.transpose() * &yc;
        for &a in alphas {
            let inv: Vec<f64> = eig.eigenvalues.iter().map(|l| 1.0 / (l.max(0.0) + a)).collect();
            let mut err = 0.0;
            for i in 0..n {
                let (mut c, mut d) = (0.0, 0.0);
                for k in 0..n {
                    c += q[(i, k)] * inv[k] * qty[k];
                    d += q[(i, k)] * q[(i, k)] * inv[k];
                }
                let e = c / d;
                err += e * e;
            }
            if err < best.0 {
                best = (err, a);
            }
        }
        let a = best.1;
        let coef = q * DVector::from_iterator(n, (0..n).map(|k| qty[k] / (eig.eigenvalues[k].max(0.0) + a)));
        xc.transpose() * coef
    };
    let intercept = ym - w.dot(&xm);
    (w, intercept, best.1)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rocket {
    pub input_scaler: Scaler,
    pub kernels: Vec<Kernel>,
    pub feature_scaler: Scaler,
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub alpha: f64,
    pub channels: usize,
    pub steps: usize,
}

impl Rocket {
    fn transform(&self, x: &[f64], n: usize) -> Vec<f64> {
        let z = self.input_scaler.apply(x);
        let w = self.channels * self.steps;
        let mut out = Vec::with_capacity(n * 2 * self.kernels.len());
        for i in 0..n {
            let s = &z[i * w..(i + 1) * w];
            for k in &self.kernels {
                let (ppv, mx) = k.apply(s, self.steps);
                out.extend([ppv, mx]);
            }
        }
        out
    }

    pub fn fit(x: &[f64], n: usize, channels: usize, steps: usize, y: &[u8], num_kernels: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // kernels longer than the dilated series are skipped
        let kernels: Vec<Kernel> = (0..num_kernels)
            .map(|_| Kernel::random(&mut rng, channels, steps))
            .filter(|k| k.output_len(steps) > 0)
            .collect();
        if kernels.is_empty() {
            return Err(Error::Fit(format!("rocket: no kernel fits series of length {steps}")));
        }
        let mut m = Self {
            input_scaler: Scaler::fit(x, n, channels, steps),
            kernels,
            feature_scaler: Scaler {
                mean: vec![],
                std: vec![],
                run: 1,
            },
            weights: vec![],
            intercept: 0.0,
            alpha: 0.0,
            channels,
            steps,
        };
        let feats = m.transform(x, n);
        let p = 2 * m.kernels.len();
        m.feature_scaler = Scaler::fit(&feats, n, p, 1);
        let z = m.feature_scaler.apply(&feats);
        let xm = DMatrix::from_row_slice(n, p, &z);
        let target: Vec<f64> = y.iter().map(|v| if *v == 1 { 1.0 } else { -1.0 }).collect();
        let (w, b, alpha) = ridge_loo(&xm, &target, &ridge_alphas());
        m.weights = w.iter().copied().collect();
        m.intercept = b;
        m.alpha = alpha;
        Ok(m)
    }

    pub fn decision(&self, x: &[f64], n: usize, channels: usize, steps: usize) -> Result<Vec<f64>> {
        if channels != self.channels || steps != self.steps {
            return Err(Error::Inference(format!(
                "rocket fitted on {}×{} series, got {channels}×{steps}",
                self.channels, self.steps
            )));
        }
        let z = self.feature_scaler.apply(&self.transform(x, n));
        let p = self.weights.len();
        Ok((0..n)
            .map(|i| z[i * p..(i + 1) * p].iter().zip(&self.weights).map(|(a, b)| a * b).sum::<f64>() + self.intercept)
            .collect())
    }

    /// `sigmoid(2 · decision)`: the ridge decision is on the `±1` target
    /// scale, so 0 maps to 0.5 and ±1 to roughly 0.12 / 0.88.
    pub fn predict(&self, x: &[f64], n: usize, channels: usize, steps: usize) -> Result<Vec<f64>> {
        Ok(self.decision(x, n, channels, steps)?.into_iter().map(|d| sigmoid(2.0 * d)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spikes(n: usize, seed: u64) -> (Vec<f64>, Vec<u8>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let spike = i % 2 == 1;
            let at = rng.random_range(3..9);
            for t in 0..12 {
                let noise: f64 = rng.random_range(-0.05..0.05);
                x.push(1.0 + noise + if spike && t == at { 5.0 } else { 0.0 });
            }
            y.push(spike as u8);
        }
        (x, y)
    }

    #[test]
    fn single_ppv_feature_separates_spikes() {
        // a centred kernel sees only noise (|Σ w·ε| ≤ 0.6) on flat series,
        // while a centred spike of height 5 contributes 30
        let mut w = vec![-1.0; 7];
        w[3] = 6.0;
        let k = Kernel {
            length: 7,
            dilation: 1,
            padding: 0,
            bias: -1.0,
            channels: vec![0],
            weights: w,
        };
        let (x, y) = spikes(60, 0);
        for i in 0..60 {
            let (ppv, _) = k.apply(&x[i * 12..(i + 1) * 12], 12);
            assert_eq!(ppv > 0.0, y[i] == 1, "row {i}");
        }
    }

    #[test]
    fn rocket_separates_spikes() {
        let (x, y) = spikes(60, 1);
        let (xt, yt) = spikes(60, 2);
        let m = Rocket::fit(&x, 60, 1, 12, &y, 200, 0).unwrap();
        let p = m.predict(&xt, 60, 1, 12).unwrap();
        let acc = p.iter().zip(&yt).filter(|(p, y)| (**p >= 0.5) == (**y == 1)).count();
        assert!(acc as f64 / 60.0 >= 0.9, "{acc}");
    }

    #[test]
    fn short_series_skip_unpadded_kernels() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let k = Kernel::random(&mut rng, 2, 6);
            assert_eq!(k.output_len(6) > 0, k.padding > 0);
        }
    }

    #[test]
    fn ridge_primal_and_dual_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 12;
        let data: Vec<f64> = (0..n * 5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..n).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let wide = DMatrix::from_row_slice(n, 5, &data);
        let (w1, b1, a1) = ridge_loo(&wide, &y, &[0.5]);
        // padding with zero columns forces the dual path
        let mut padded = DMatrix::zeros(n, 20);
        padded.view_mut((0, 0), (n, 5)).copy_from(&wide);
        let (w2, b2, a2) = ridge_loo(&padded, &y, &[0.5]);
        assert_eq!(a1, a2);
        assert!((b1 - b2).abs() < 1e-9);
        for j in 0..5 {
            assert!((w1[j] - w2[j]).abs() < 1e-9);
        }
    }
}
