//! Penalised logistic regression.

use serde::{Deserialize, Serialize};

use super::scale::Scaler;
use super::Penalty;
use crate::error::{Error, Result};

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Minimises `C Σ log(1 + exp(-s_i (w·x_i + b))) + R(w)` with
/// `R = ||w||₁` or `½||w||²` on z-scored inputs. The intercept is not
/// penalised.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogReg {
    pub scaler: Scaler,
    pub weights: Vec<f64>,
    pub intercept: f64,
}

const MAX_ITER: usize = 20_000;
const TOL: f64 = 1e-10;

/// Largest eigenvalue of `AᵀA` for `A = [x | 1]`, by power iteration.
fn spectral_sq(x: &[f64], n: usize, d: usize) -> f64 {
    let mut v = vec![1.0 / ((d + 1) as f64).sqrt(); d + 1];
    let mut lambda = 0.0;
    let mut av = vec![0.0; n];
    for _ in 0..100 {
        for i in 0..n {
            let row = &x[i * d..(i + 1) * d];
            av[i] = row.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>() + v[d];
        }
        let mut w = vec![0.0; d + 1];
        for i in 0..n {
            let row = &x[i * d..(i + 1) * d];
            for j in 0..d {
                w[j] += row[j] * av[i];
            }
            w[d] += av[i];
        }
        let norm = w.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        let next = norm;
        v = w.iter().map(|a| a / norm).collect();
        if (next - lambda).abs() <= 1e-9 * next {
            return next;
        }
        lambda = next;
    }
    lambda
}

impl LogReg {
    pub fn fit(x: &[f64], n: usize, d: usize, y: &[u8], c: f64, penalty: Penalty) -> Result<Self> {
        if x.len() != n * d || y.len() != n {
            return Err(Error::Fit("logreg: inconsistent input sizes".into()));
        }
        let scaler = Scaler::fit(x, n, d, 1);
        let z = scaler.apply(x);
        // Lipschitz constant of the smooth part's gradient.
        let lip = c * spectral_sq(&z, n, d) / 4.0 + if penalty == Penalty::L2 { 1.0 } else { 0.0 };
        let step = 1.0 / lip.max(1e-12);
        let m = d + 1;
        let mut w = vec![0.0; m];
        let mut prev = w.clone();
        let mut v = w.clone();
        let mut t = 1.0f64;
        let mut grad = vec![0.0; m];
        for _ in 0..MAX_ITER {
            grad.iter_mut().for_each(|g| *g = 0.0);
            for i in 0..n {
                let row = &z[i * d..(i + 1) * d];
                let s = row.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>() + v[d];
                let r = c * (sigmoid(s) - y[i] as f64);
                for j in 0..d {
                    grad[j] += r * row[j];
                }
                grad[d] += r;
            }
            if penalty == Penalty::L2 {
                for j in 0..d {
                    grad[j] += v[j];
                }
            }
            prev.copy_from_slice(&w);
            for j in 0..m {
                w[j] = v[j] - step * grad[j];
            }
            if penalty == Penalty::L1 {
                for wj in w.iter_mut().take(d) {
                    *wj = wj.signum() * (wj.abs() - step).max(0.0);
                }
            }
            let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
            let mom = (t - 1.0) / t_next;
            // adaptive restart when the momentum points uphill
            let uphill: f64 = (0..m).map(|j| (v[j] - w[j]) * (w[j] - prev[j])).sum();
            if uphill > 0.0 {
                t = 1.0;
                v.copy_from_slice(&w);
            } else {
                for j in 0..m {
                    v[j] = w[j] + mom * (w[j] - prev[j]);
                }
                t = t_next;
            }
            let delta = (0..m).map(|j| (w[j] - prev[j]).abs()).fold(0.0, f64::max);
            let scale = w.iter().map(|a| a.abs()).fold(1.0, f64::max);
            if delta <= TOL * scale {
                break;
            }
        }
        if w.iter().any(|a| !a.is_finite()) {
            return Err(Error::Fit("logreg: optimisation produced non-finite weights".into()));
        }
        let intercept = w[d];
        w.truncate(d);
        Ok(Self {
            scaler,
            weights: w,
            intercept,
        })
    }

    pub fn decision(&self, x: &[f64], n: usize, d: usize) -> Result<Vec<f64>> {
        if d != self.weights.len() {
            return Err(Error::Inference(format!(
                "logreg fitted on {} features, got {d}",
                self.weights.len()
            )));
        }
        let z = self.scaler.apply(x);
        Ok((0..n)
            .map(|i| {
                z[i * d..(i + 1) * d]
                    .iter()
                    .zip(&self.weights)
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
                    + self.intercept
            })
            .collect())
    }

    pub fn predict(&self, x: &[f64], n: usize, d: usize) -> Result<Vec<f64>> {
        Ok(self.decision(x, n, d)?.into_iter().map(sigmoid).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> (Vec<f64>, Vec<u8>) {
        let x = vec![
            0.0, 0.0, 1.0, 0.5, 0.5, 1.0, 0.2, 0.3, // class 0: x + y < 2
            2.0, 2.0, 3.0, 1.5, 1.5, 3.0, 2.5, 2.5, // class 1
        ];
        (x, vec![0, 0, 0, 0, 1, 1, 1, 1])
    }

    #[test]
    fn separable_toy_fits_exactly() {
        let (x, y) = toy();
        for penalty in [Penalty::L1, Penalty::L2] {
            let m = LogReg::fit(&x, 8, 2, &y, 1.0, penalty).unwrap();
            let p = m.predict(&x, 8, 2).unwrap();
            let acc = p.iter().zip(&y).filter(|(p, y)| (**p >= 0.5) == (**y == 1)).count();
            assert_eq!(acc, 8, "{penalty:?}");
        }
    }

    #[test]
    fn zero_weights_give_one_half() {
        let m = LogReg {
            scaler: Scaler::fit(&[0.0, 1.0], 2, 1, 1),
            weights: vec![0.0],
            intercept: 0.0,
        };
        assert_eq!(m.predict(&[5.0, -3.0], 2, 1).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn stronger_l1_gives_sparser_weights() {
        // second feature is noise
        let x: Vec<f64> = (0..40).flat_map(|i| [i as f64, ((i * 7) % 5) as f64]).collect();
        let y: Vec<u8> = (0..40).map(|i| (i >= 20) as u8).collect();
        let weak = LogReg::fit(&x, 40, 2, &y, 10.0, Penalty::L1).unwrap();
        let strong = LogReg::fit(&x, 40, 2, &y, 0.01, Penalty::L1).unwrap();
        let l1 = |m: &LogReg| m.weights.iter().map(|w| w.abs()).sum::<f64>();
        assert!(l1(&strong) < l1(&weak));
        assert_eq!(strong.weights[1], 0.0);
    }

    #[test]
    fn optimality_conditions_hold_for_l2() {
        let x: Vec<f64> = (0..30).flat_map(|i| [((i * 13) % 7) as f64, (i % 4) as f64]).collect();
        let y: Vec<u8> = (0..30).map(|i| ((i * 5) % 3 == 0) as u8).collect();
        let c = 0.7;
        let m = LogReg::fit(&x, 30, 2, &y, c, Penalty::L2).unwrap();
        let z = m.scaler.apply(&x);
        let p = m.predict(&x, 30, 2).unwrap();
        // gradient of C Σ loss + ½||w||² vanishes at the optimum
        for j in 0..2 {
            let g: f64 = (0..30).map(|i| c * (p[i] - y[i] as f64) * z[i * 2 + j]).sum::<f64>() + m.weights[j];
            assert!(g.abs() < 1e-6, "{g}");
        }
        let gb: f64 = (0..30).map(|i| p[i] - y[i] as f64).sum();
        assert!(gb.abs() < 1e-6);
    }
}
