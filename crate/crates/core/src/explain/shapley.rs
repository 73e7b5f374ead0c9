//! Shapley values of cooperative games given as a batched value function
//! `v(coalitions) -> payoffs`, each coalition a membership mask over `M`
//! players.

use std::collections::HashMap;

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest player count the exact oracle enumerates.
pub const MAX_EXACT_PLAYERS: usize = 15;

/// Default coalition budget for KernelSHAP.
pub const DEFAULT_COALITIONS: usize = 2048;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    pub phi: Vec<f64>,
    /// Payoff of the empty coalition (everything masked).
    pub base_value: f64,
    /// Payoff of the full coalition (the unmasked input).
    pub output: f64,
}

impl Attribution {
    /// `Σφ - (output - base_value)`; zero up to rounding when efficient.
    pub fn efficiency_gap(&self) -> f64 {
        self.phi.iter().sum::<f64>() - (self.output - self.base_value)
    }
}

pub trait Game {
    fn players(&self) -> usize;
    fn values(&self, coalitions: &[Vec<bool>]) -> Result<Vec<f64>>;
}

fn mask_of(bits: usize, m: usize) -> Vec<bool> {
    (0..m).map(|i| bits >> i & 1 == 1).collect()
}

/// Enumerates all `2^M` coalitions.
pub fn exact_shapley(game: &dyn Game) -> Result<Attribution> {
    let m = game.players();
    if m > MAX_EXACT_PLAYERS {
        return Err(Error::Explain(format!(
            "exact Shapley enumeration refuses {m} players (limit {MAX_EXACT_PLAYERS})"
        )));
    }
    let total = 1usize << m;
    let coalitions: Vec<Vec<bool>> = (0..total).map(|b| mask_of(b, m)).collect();
    let v = game.values(&coalitions)?;
    // w(s) = s! (M - s - 1)! / M!
    let mut fact = vec![1.0f64; m + 1];
    for i in 1..=m {
        fact[i] = fact[i - 1] * i as f64;
    }
    let weight: Vec<f64> = (0..m).map(|s| fact[s] * fact[m - s - 1] / fact[m]).collect();
    let mut phi = vec![0.0; m];
    for (bits, vs) in v.iter().enumerate() {
        let size = bits.count_ones() as usize;
        for (i, p) in phi.iter_mut().enumerate() {
            if bits >> i & 1 == 0 {
                *p += weight[size] * (v[bits | 1 << i] - vs);
            }
        }
    }
    Ok(Attribution {
        phi,
        base_value: v[0],
        output: v[total - 1],
    })
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Visits every `k`-subset of `0..n` in lexicographic order.
fn for_each_subset(n: usize, k: usize, f: &mut dyn FnMut(&[usize])) {
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        f(&idx);
        let Some(i) = (0..k).rev().find(|i| idx[*i] != i + n - k) else {
            return;
        };
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Weighted coalitions for KernelSHAP: sizes whose every subset fits the
/// remaining budget are enumerated (smallest and largest sizes first, as they
/// carry the most kernel weight); the remaining budget is filled with
/// sampled complementary pairs.
fn design(m: usize, budget: usize, seed: u64) -> Vec<(Vec<bool>, f64)> {
    let sizes = (m - 1).div_ceil(2);
    let paired = |s: usize| s != m - s;
    let mut kernel: Vec<f64> = (1..=sizes)
        .map(|s| {
            let w = (m - 1) as f64 / (s * (m - s)) as f64;
            if paired(s) {
                2.0 * w
            } else {
                w
            }
        })
        .collect();
    let sum: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|w| *w /= sum);

    let mut out: Vec<(Vec<bool>, f64)> = Vec::new();
    let mut left = budget as f64;
    let mut remaining = kernel.clone();
    let mut full_sizes = 0;
    for s in 1..=sizes {
        let count = binomial(m, s) * if paired(s) { 2.0 } else { 1.0 };
        let mass: f64 = remaining[s - 1..].iter().sum();
        let share = remaining[s - 1] / mass;
        if left * share + 1e-9 < count {
            break;
        }
        full_sizes = s;
        let w = kernel[s - 1] / count;
        for_each_subset(m, s, &mut |idx| {
            let mut z = vec![false; m];
            idx.iter().for_each(|i| z[*i] = true);
            if paired(s) {
                out.push((z.iter().map(|b| !b).collect(), w));
            }
            out.push((z, w));
        });
        left -= count;
        remaining[s - 1] = 0.0;
    }
    if full_sizes < sizes && left >= 2.0 {
        let rest: Vec<f64> = kernel[full_sizes..].to_vec();
        let rest_mass: f64 = rest.iter().sum();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut seen: HashMap<Vec<bool>, f64> = HashMap::new();
        let mut order: Vec<Vec<bool>> = Vec::new();
        let draws = (left / 2.0).floor() as usize;
        let mut added = 0.0;
        for _ in 0..draws {
            let mut u = rng.random::<f64>() * rest_mass;
            let mut s = full_sizes + 1;
            for (k, w) in rest.iter().enumerate() {
                if u < *w {
                    s = full_sizes + 1 + k;
                    break;
                }
                u -= w;
            }
            let mut z = vec![false; m];
            for i in sample(&mut rng, m, s) {
                z[i] = true;
            }
            let zc: Vec<bool> = z.iter().map(|b| !b).collect();
            for c in [z, zc] {
                match seen.get_mut(&c) {
                    Some(w) => *w += 1.0,
                    None => {
                        seen.insert(c.clone(), 1.0);
                        order.push(c);
                    }
                }
                added += 1.0;
            }
        }
        for c in order {
            let w = seen[&c] / added * rest_mass;
            out.push((c, w));
        }
    }
    out
}

/// KernelSHAP with the base value and efficiency imposed exactly: the
/// empty and full coalitions enter as constraints rather than as heavily
/// weighted rows. `n_coalitions` counts both of them.
pub fn kernel_shap(game: &dyn Game, n_coalitions: usize, seed: u64) -> Result<Attribution> {
    let m = game.players();
    if n_coalitions < m + 2 {
        return Err(Error::Explain(format!(
            "KernelSHAP needs at least M + 2 = {} coalitions, got {n_coalitions}",
            m + 2
        )));
    }
    let ends = game.values(&[vec![false; m], vec![true; m]])?;
    let (base, output) = (ends[0], ends[1]);
    let delta = output - base;
    if m == 0 {
        return Ok(Attribution {
            phi: vec![],
            base_value: base,
            output,
        });
    }
    if m == 1 {
        return Ok(Attribution {
            phi: vec![delta],
            base_value: base,
            output,
        });
    }
    let rows = design(m, n_coalitions - 2, seed);
    let masks: Vec<Vec<bool>> = rows.iter().map(|(z, _)| z.clone()).collect();
    let v = game.values(&masks)?;
    // φ_M = Δ - Σ_{j<M} φ_j; regress on the first M-1 players.
    let p = m - 1;
    let mut xtwx = DMatrix::<f64>::zeros(p, p);
    let mut xtwy = DVector::<f64>::zeros(p);
    let last = m - 1;
    for ((z, w), vz) in rows.iter().zip(&v) {
        let zl = z[last] as u8 as f64;
        let x: Vec<f64> = (0..p).map(|j| z[j] as u8 as f64 - zl).collect();
        let y = vz - base - zl * delta;
        for a in 0..p {
            if x[a] == 0.0 {
                continue;
            }
            xtwy[a] += w * x[a] * y;
            for b in 0..p {
                xtwx[(a, b)] += w * x[a] * x[b];
            }
        }
    }
    let solved = match xtwx.clone().cholesky() {
        Some(c) => c.solve(&xtwy),
        None => {
            warn!("KernelSHAP system is singular; using ridge fallback λ = 1e-9");
            let ridge = xtwx + DMatrix::<f64>::identity(p, p) * 1e-9;
            ridge
                .lu()
                .solve(&xtwy)
                .ok_or_else(|| Error::Explain("KernelSHAP system could not be solved".into()))?
        }
    };
    let mut phi: Vec<f64> = solved.iter().copied().collect();
    phi.push(delta - phi.iter().sum::<f64>());
    if phi.iter().any(|v| !v.is_finite()) {
        return Err(Error::Explain("KernelSHAP produced non-finite attributions".into()));
    }
    Ok(Attribution {
        phi,
        base_value: base,
        output,
    })
}

/// Budget used when none is configured: `min(2^M, 2048)`.
pub fn default_coalitions(m: usize) -> usize {
    if m >= 11 {
        DEFAULT_COALITIONS
    } else {
        (1usize << m).max(m + 2)
    }
}

/// A game defined by a closure over single coalitions, for tests and small
/// analytic models.
pub struct FnGame<F: Fn(&[bool]) -> f64> {
    pub m: usize,
    pub f: F,
}

impl<F: Fn(&[bool]) -> f64> Game for FnGame<F> {
    fn players(&self) -> usize {
        self.m
    }

    fn values(&self, coalitions: &[Vec<bool>]) -> Result<Vec<f64>> {
        Ok(coalitions.iter().map(|z| (self.f)(z)).collect())
    }
}
