//! Histogram CART regression trees, shared by gradient boosting (logistic
//! loss, Newton leaves) and random forests (bootstrap, √d features per split).

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::linear::sigmoid;
use crate::error::{Error, Result};

const MAX_BINS: usize = 255;
/// Shrinkage for boosting (the usual default of 0.1).
pub const GBT_LEARNING_RATE: f64 = 0.1;

const LEAF: u32 = u32::MAX;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Node {
    /// `u32::MAX` for leaves.
    pub feature: u32,
    pub threshold: f64,
    pub left: u32,
    pub right: u32,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn eval(&self, row: &[f64]) -> f64 {
        let mut i = 0usize;
        loop {
            let n = &self.nodes[i];
            if n.feature == LEAF {
                return n.value;
            }
            i = if row[n.feature as usize] <= n.threshold {
                n.left as usize
            } else {
                n.right as usize
            };
        }
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, i: usize) -> usize {
            let n = &t.nodes[i];
            if n.feature == LEAF {
                0
            } else {
                1 + go(t, n.left as usize).max(go(t, n.right as usize))
            }
        }
        go(self, 0)
    }
}

/// Training matrix quantised per feature. Cut points are midpoints between
/// distinct values (or quantiles when there are too many), so `bin ≤ s`
/// exactly when `x ≤ cuts[s]` for every training value.
struct Binned {
    d: usize,
    bins: Vec<u8>,
    cuts: Vec<Vec<f64>>,
}

impl Binned {
    fn new(x: &[f64], n: usize, d: usize) -> Self {
        let mut cuts = Vec::with_capacity(d);
        for j in 0..d {
            let mut col: Vec<f64> = (0..n).map(|i| x[i * d + j]).collect();
            col.sort_by(f64::total_cmp);
            col.dedup();
            let c: Vec<f64> = if col.len() <= MAX_BINS {
                col.windows(2).map(|w| (w[0] + w[1]) / 2.0).collect()
            } else {
                let mut c: Vec<f64> = (1..MAX_BINS)
                    .map(|q| {
                        let k = q * (col.len() - 1) / MAX_BINS;
                        (col[k] + col[k + 1]) / 2.0
                    })
                    .collect();
                c.dedup();
                c
            };
            cuts.push(c);
        }
        let mut bins = vec![0u8; n * d];
        for i in 0..n {
            for j in 0..d {
                let v = x[i * d + j];
                bins[i * d + j] = cuts[j].partition_point(|c| *c < v) as u8;
            }
        }
        Self { d, bins, cuts }
    }
}

struct Builder<'a> {
    data: &'a Binned,
    target: &'a [f64],
    /// Leaf denominator per row (hessian for boosting, 1 for forests).
    weight: &'a [f64],
    max_depth: usize,
    max_features: usize,
    nodes: Vec<Node>,
}

struct Split {
    feature: usize,
    bin: usize,
    gain: f64,
}

impl Builder<'_> {
    fn leaf_value(&self, rows: &[usize]) -> f64 {
        let s: f64 = rows.iter().map(|i| self.target[*i]).sum();
        let w: f64 = rows.iter().map(|i| self.weight[*i]).sum();
        if w > 1e-12 {
            s / w
        } else {
            0.0
        }
    }

    fn push_leaf(&mut self, value: f64) -> u32 {
        self.nodes.push(Node {
            feature: LEAF,
            threshold: 0.0,
            left: 0,
            right: 0,
            value,
        });
        (self.nodes.len() - 1) as u32
    }

    fn best_split(&self, rows: &[usize], rng: &mut ChaCha8Rng) -> Option<Split> {
        let d = self.data.d;
        let feats: Vec<usize> = if self.max_features >= d {
            (0..d).collect()
        } else {
            let mut f = sample(rng, d, self.max_features).into_vec();
            f.sort_unstable();
            f
        };
        let total: f64 = rows.iter().map(|i| self.target[*i]).sum();
        let n = rows.len() as f64;
        let parent = total * total / n;
        let mut best: Option<Split> = None;
        let mut sum = [0.0f64; MAX_BINS + 1];
        let mut cnt = [0usize; MAX_BINS + 1];
        for &j in &feats {
            let nb = self.data.cuts[j].len() + 1;
            if nb < 2 {
                continue;
            }
            sum[..nb].iter_mut().for_each(|v| *v = 0.0);
            cnt[..nb].iter_mut().for_each(|v| *v = 0);
            for &i in rows {
                let b = self.data.bins[i * d + j] as usize;
                sum[b] += self.target[i];
                cnt[b] += 1;
            }
            let (mut ls, mut lc) = (0.0, 0usize);
            for b in 0..nb - 1 {
                ls += sum[b];
                lc += cnt[b];
                if lc == 0 || lc == rows.len() {
                    continue;
                }
                let rs = total - ls;
                let rc = rows.len() - lc;
                let gain = ls * ls / lc as f64 + rs * rs / rc as f64 - parent;
                if gain > 1e-12 && best.as_ref().is_none_or(|s| gain > s.gain) {
                    best = Some(Split { feature: j, bin: b, gain });
                }
            }
        }
        best
    }

    fn grow(&mut self, rows: Vec<usize>, depth: usize, rng: &mut ChaCha8Rng) -> u32 {
        let value = self.leaf_value(&rows);
        if depth >= self.max_depth || rows.len() < 2 {
            return self.push_leaf(value);
        }
        let Some(split) = self.best_split(&rows, rng) else {
            return self.push_leaf(value);
        };
        let d = self.data.d;
        let (left, right): (Vec<usize>, Vec<usize>) = rows
            .into_iter()
            .partition(|i| self.data.bins[i * d + split.feature] as usize <= split.bin);
        let me = self.push_leaf(value);
        let l = self.grow(left, depth + 1, rng);
        let r = self.grow(right, depth + 1, rng);
        let node = &mut self.nodes[me as usize];
        node.feature = split.feature as u32;
        node.threshold = self.data.cuts[split.feature][split.bin];
        node.left = l;
        node.right = r;
        me
    }
}

fn build_tree(
    data: &Binned,
    rows: Vec<usize>,
    target: &[f64],
    weight: &[f64],
    max_depth: usize,
    max_features: usize,
    rng: &mut ChaCha8Rng,
) -> Tree {
    let mut b = Builder {
        data,
        target,
        weight,
        max_depth,
        max_features,
        nodes: Vec::new(),
    };
    b.grow(rows, 0, rng);
    Tree { nodes: b.nodes }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Ensemble {
    Boosted { init: f64, learning_rate: f64 },
    Bagged,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub ensemble: Ensemble,
    pub trees: Vec<Tree>,
    pub dim: usize,
}

fn check(x: &[f64], n: usize, d: usize, y: &[u8]) -> Result<()> {
    if x.len() != n * d || y.len() != n || n == 0 {
        return Err(Error::Fit("trees: inconsistent input sizes".into()));
    }
    Ok(())
}

impl Forest {
    pub fn fit_gbt(x: &[f64], n: usize, d: usize, y: &[u8], n_estimators: usize, max_depth: usize, seed: u64) -> Result<Self> {
        check(x, n, d, y)?;
        let data = Binned::new(x, n, d);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let prior = y.iter().map(|v| *v as f64).sum::<f64>() / n as f64;
        let init = (prior / (1.0 - prior)).ln();
        let mut f = vec![init; n];
        let mut trees = Vec::with_capacity(n_estimators);
        let mut resid = vec![0.0; n];
        let mut hess = vec![0.0; n];
        for _ in 0..n_estimators {
            for i in 0..n {
                let p = sigmoid(f[i]);
                resid[i] = y[i] as f64 - p;
                hess[i] = p * (1.0 - p);
            }
            let t = build_tree(&data, (0..n).collect(), &resid, &hess, max_depth, d, &mut rng);
            for (i, fi) in f.iter_mut().enumerate() {
                *fi += GBT_LEARNING_RATE * t.eval(&x[i * d..(i + 1) * d]);
            }
            trees.push(t);
        }
        Ok(Self {
            ensemble: Ensemble::Boosted {
                init,
                learning_rate: GBT_LEARNING_RATE,
            },
            trees,
            dim: d,
        })
    }

    pub fn fit_rf(x: &[f64], n: usize, d: usize, y: &[u8], n_estimators: usize, max_depth: usize, seed: u64) -> Result<Self> {
        check(x, n, d, y)?;
        let data = Binned::new(x, n, d);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let target: Vec<f64> = y.iter().map(|v| *v as f64).collect();
        let ones = vec![1.0; n];
        let max_features = ((d as f64).sqrt() as usize).max(1);
        let trees = (0..n_estimators)
            .map(|_| {
                let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
                build_tree(&data, rows, &target, &ones, max_depth, max_features, &mut rng)
            })
            .collect();
        Ok(Self {
            ensemble: Ensemble::Bagged,
            trees,
            dim: d,
        })
    }

    pub fn predict(&self, x: &[f64], n: usize, d: usize) -> Result<Vec<f64>> {
        if d != self.dim {
            return Err(Error::Inference(format!("trees fitted on {} features, got {d}", self.dim)));
        }
        Ok((0..n)
            .map(|i| {
                let row = &x[i * d..(i + 1) * d];
                match self.ensemble {
                    Ensemble::Boosted { init, learning_rate } => {
                        sigmoid(init + learning_rate * self.trees.iter().map(|t| t.eval(row)).sum::<f64>())
                    }
                    Ensemble::Bagged => {
                        self.trees.iter().map(|t| t.eval(row)).sum::<f64>() / self.trees.len() as f64
                    }
                }
            })
            .collect())
    }
}
