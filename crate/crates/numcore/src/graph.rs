use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{shape_err, NumError, Result};
use crate::kernels::gemm;
use crate::module::Module;
use crate::tensor::Tensor;

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

const BCE_EPS: f64 = 1e-12;

enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulConst(Var, Vec<f64>),
    Blend { a: Var, b: Var, weights: Vec<f64> },
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Softmax(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    Mean(Var),
    Sum(Var),
    MeanAxis(Var, usize),
    Bce { p: Var, y: Vec<f64> },
    BceLogits { z: Var, y: Vec<f64> },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
        batch_stats: bool,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        seq_len: usize,
        probs: Vec<f64>,
    },
}

struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    needs_grad: bool,
}

/// Tape recording one forward pass.
///
/// Nodes are appended in evaluation order, so a reverse sweep over the node
/// list is a valid topological order for backpropagation.
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<u64, Var>,
    grads: Vec<Option<Vec<f64>>>,
    rng: ChaCha8Rng,
    stat_updates: Vec<(u64, Vec<f64>)>,
}

fn dims2(shape: &[usize]) -> Option<(usize, usize)> {
    match shape {
        [m, n] => Some((*m, *n)),
        _ => None,
    }
}

impl Graph {
    /// New empty tape; `seed` drives dropout masks drawn during the pass.
    pub fn new(seed: u64) -> Self {
        Self {
            nodes: Vec::new(),
            params: HashMap::new(),
            grads: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            stat_updates: Vec::new(),
        }
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, needs_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    /// First element of a node, for scalar losses.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        Tensor::new(self.shape(v).to_vec(), self.value(v).to_vec()).expect("node is consistent")
    }

    /// Non-differentiable input data.
    pub fn input(&mut self, shape: &[usize], data: Vec<f64>) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return shape_err("input", shape, &[data.len()]);
        }
        Ok(self.push(shape.to_vec(), data, Op::Leaf, false))
    }

    pub fn constant(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, false)
    }

    /// Leaf that participates in differentiation if `t.requires_grad()`;
    /// its gradient is read back with [`Graph::grad`].
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push(
            t.shape().to_vec(),
            t.data().to_vec(),
            Op::Leaf,
            t.requires_grad(),
        )
    }

    /// Registers a parameter tensor. Repeated calls with the same tensor
    /// return the same node.
    pub fn param(&mut self, t: &Tensor) -> Var {
        if let Some(v) = self.params.get(&t.key()) {
            return *v;
        }
        let v = self.push(
            t.shape().to_vec(),
            t.data().to_vec(),
            Op::Param,
            t.requires_grad(),
        );
        self.params.insert(t.key(), v);
        v
    }

    fn check_same(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return shape_err(op, self.shape(a), self.shape(b));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let (Some((m, k)), Some((k2, n))) = (dims2(sa), dims2(sb)) else {
            return shape_err("matmul", sa, sb);
        };
        if k != k2 {
            return shape_err("matmul", sa, sb);
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a), false, self.value(b), false, 0.0, &mut out);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(vec![m, n], out, Op::MatMul(a, b), ng))
    }

    fn zip_op(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        self.check_same(name, a, b)?;
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| f(*x, *y))
            .collect();
        let ng = self.needs(a) || self.needs(b);
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, out, op, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_op("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_op("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_op("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// `a[m, n] + b[n]`, broadcasting `b` over rows.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let Some((m, n)) = dims2(sa) else {
            return shape_err("add_row", sa, sb);
        };
        if sb != [n] {
            return shape_err("add_row", sa, sb);
        }
        let bv = self.value(b);
        let mut out = self.value(a).to_vec();
        for i in 0..m {
            for (o, bj) in out[i * n..(i + 1) * n].iter_mut().zip(bv) {
                *o += bj;
            }
        }
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(vec![m, n], out, Op::AddRow(a, b), ng))
    }

    /// Elementwise product with a constant array (dropout masks).
    pub fn mul_const(&mut self, a: Var, c: Vec<f64>) -> Result<Var> {
        if c.len() != self.value(a).len() {
            return shape_err("mul_const", self.shape(a), &[c.len()]);
        }
        let out = self.value(a).iter().zip(&c).map(|(x, y)| x * y).collect();
        let ng = self.needs(a);
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, out, Op::MulConst(a, c), ng))
    }

    /// Row-wise convex mix `w_i * a + (1 - w_i) * b` of two `[m, n]` nodes.
    pub fn blend_rows(&mut self, a: Var, b: Var, weights: Vec<f64>) -> Result<Var> {
        self.check_same("blend_rows", a, b)?;
        let Some((m, n)) = dims2(self.shape(a)) else {
            return shape_err("blend_rows", self.shape(a), self.shape(b));
        };
        if weights.len() != m {
            return shape_err("blend_rows", self.shape(a), &[weights.len()]);
        }
        let (av, bv) = (self.value(a), self.value(b));
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let w = weights[i];
            for j in 0..n {
                out[i * n + j] = w * av[i * n + j] + (1.0 - w) * bv[i * n + j];
            }
        }
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(vec![m, n], out, Op::Blend { a, b, weights }, ng))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).iter().map(|x| x * s).collect();
        let ng = self.needs(a);
        let shape = self.shape(a).to_vec();
        self.push(shape, out, Op::Scale(a, s), ng)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).iter().map(|x| x + s).collect();
        let ng = self.needs(a);
        let shape = self.shape(a).to_vec();
        self.push(shape, out, Op::AddScalar(a), ng)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out = self.value(a).iter().map(|x| f(*x)).collect();
        let ng = self.needs(a);
        let shape = self.shape(a).to_vec();
        self.push(shape, out, op, ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    /// Row-wise softmax of a 2-D node. Entries whose mask is `false` get
    /// probability zero; a fully masked row is all zeros.
    pub fn softmax_rows(&mut self, a: Var, mask: Option<&[bool]>) -> Result<Var> {
        let Some((m, n)) = dims2(self.shape(a)) else {
            return shape_err("softmax_rows", self.shape(a), &[]);
        };
        if let Some(mk) = mask {
            if mk.len() != m * n {
                return shape_err("softmax_rows", self.shape(a), &[mk.len()]);
            }
        }
        let x = self.value(a);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &x[i * n..(i + 1) * n];
            let valid = |j: usize| mask.is_none_or(|mk| mk[i * n + j]);
            softmax_into(row, valid, &mut out[i * n..(i + 1) * n]);
        }
        let ng = self.needs(a);
        Ok(self.push(vec![m, n], out, Op::Softmax(a), ng))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| NumError::Invalid("concat_cols of nothing".into()))?;
        let Some((m, _)) = dims2(self.shape(first)) else {
            return shape_err("concat_cols", self.shape(first), &[]);
        };
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            match dims2(self.shape(*p)) {
                Some((mp, np)) if mp == m => widths.push(np),
                _ => return shape_err("concat_cols", self.shape(first), self.shape(*p)),
            }
        }
        let total: usize = widths.iter().sum();
        let mut out = vec![0.0; m * total];
        let mut off = 0;
        for (p, w) in parts.iter().zip(&widths) {
            let v = self.value(*p);
            for i in 0..m {
                out[i * total + off..i * total + off + w].copy_from_slice(&v[i * w..(i + 1) * w]);
            }
            off += w;
        }
        let ng = parts.iter().any(|p| self.needs(*p));
        Ok(self.push(vec![m, total], out, Op::ConcatCols(parts.to_vec()), ng))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| NumError::Invalid("concat_rows of nothing".into()))?;
        let Some((_, n)) = dims2(self.shape(first)) else {
            return shape_err("concat_rows", self.shape(first), &[]);
        };
        let mut rows = 0;
        let mut out = Vec::new();
        for p in parts {
            match dims2(self.shape(*p)) {
                Some((mp, np)) if np == n => {
                    rows += mp;
                    out.extend_from_slice(self.value(*p));
                }
                _ => return shape_err("concat_rows", self.shape(first), self.shape(*p)),
            }
        }
        let ng = parts.iter().any(|p| self.needs(*p));
        Ok(self.push(vec![rows, n], out, Op::ConcatRows(parts.to_vec()), ng))
    }

    /// Columns `start..end` of a 2-D node.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let Some((m, n)) = dims2(self.shape(a)) else {
            return shape_err("slice_cols", self.shape(a), &[start, end]);
        };
        if start >= end || end > n {
            return shape_err("slice_cols", self.shape(a), &[start, end]);
        }
        let w = end - start;
        let v = self.value(a);
        let mut out = Vec::with_capacity(m * w);
        for i in 0..m {
            out.extend_from_slice(&v[i * n + start..i * n + end]);
        }
        let ng = self.needs(a);
        Ok(self.push(vec![m, w], out, Op::SliceCols(a, start), ng))
    }

    /// Selects rows of a 2-D node (embedding lookup).
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let Some((m, n)) = dims2(self.shape(a)) else {
            return shape_err("gather_rows", self.shape(a), &[idx.len()]);
        };
        if let Some(bad) = idx.iter().find(|&&i| i >= m) {
            return Err(NumError::Invalid(format!(
                "gather_rows: index {bad} out of range for {m} rows"
            )));
        }
        let v = self.value(a);
        let mut out = Vec::with_capacity(idx.len() * n);
        for &i in idx {
            out.extend_from_slice(&v[i * n..(i + 1) * n]);
        }
        let ng = self.needs(a);
        Ok(self.push(
            vec![idx.len(), n],
            out,
            Op::GatherRows(a, idx.to_vec()),
            ng,
        ))
    }

    /// Mean of all elements, shape `[1]`.
    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let out = vec![v.iter().sum::<f64>() / v.len().max(1) as f64];
        let ng = self.needs(a);
        self.push(vec![1], out, Op::Mean(a), ng)
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum(&mut self, a: Var) -> Var {
        let out = vec![self.value(a).iter().sum::<f64>()];
        let ng = self.needs(a);
        self.push(vec![1], out, Op::Sum(a), ng)
    }

    /// Mean over `axis` of a 2-D node; axis 0 gives `[n]`, axis 1 gives `[m]`.
    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let Some((m, n)) = dims2(self.shape(a)) else {
            return shape_err("mean_axis", self.shape(a), &[axis]);
        };
        let v = self.value(a);
        let (shape, out) = match axis {
            0 => {
                let mut o = vec![0.0; n];
                for i in 0..m {
                    for j in 0..n {
                        o[j] += v[i * n + j];
                    }
                }
                o.iter_mut().for_each(|x| *x /= m as f64);
                (vec![n], o)
            }
            1 => {
                let o = (0..m)
                    .map(|i| v[i * n..(i + 1) * n].iter().sum::<f64>() / n as f64)
                    .collect();
                (vec![m], o)
            }
            _ => return shape_err("mean_axis", self.shape(a), &[axis]),
        };
        let ng = self.needs(a);
        Ok(self.push(shape, out, Op::MeanAxis(a, axis), ng))
    }

    /// Mean binary cross-entropy of probabilities `p` against targets `y`.
    pub fn bce(&mut self, p: Var, y: &[f64]) -> Result<Var> {
        if self.value(p).len() != y.len() {
            return shape_err("bce", self.shape(p), &[y.len()]);
        }
        let n = y.len().max(1) as f64;
        let loss = self
            .value(p)
            .iter()
            .zip(y)
            .map(|(&pi, &yi)| {
                let pc = pi.clamp(BCE_EPS, 1.0 - BCE_EPS);
                -(yi * pc.ln() + (1.0 - yi) * (1.0 - pc).ln())
            })
            .sum::<f64>()
            / n;
        let ng = self.needs(p);
        Ok(self.push(vec![1], vec![loss], Op::Bce { p, y: y.to_vec() }, ng))
    }

    /// Mean binary cross-entropy computed from logits (numerically stable).
    pub fn bce_with_logits(&mut self, z: Var, y: &[f64]) -> Result<Var> {
        if self.value(z).len() != y.len() {
            return shape_err("bce_with_logits", self.shape(z), &[y.len()]);
        }
        let n = y.len().max(1) as f64;
        let loss = self
            .value(z)
            .iter()
            .zip(y)
            .map(|(&zi, &yi)| zi.max(0.0) - zi * yi + (-zi.abs()).exp().ln_1p())
            .sum::<f64>()
            / n;
        let ng = self.needs(z);
        Ok(self.push(
            vec![1],
            vec![loss],
            Op::BceLogits { z, y: y.to_vec() },
            ng,
        ))
    }

    /// Row-wise layer normalisation of `x[m, n]` with affine `gamma[n]`, `beta[n]`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let Some((m, n)) = dims2(self.shape(x)) else {
            return shape_err("layer_norm", self.shape(x), self.shape(gamma));
        };
        if self.shape(gamma) != [n] || self.shape(beta) != [n] {
            return shape_err("layer_norm", self.shape(x), self.shape(gamma));
        }
        let xv = self.value(x);
        let (gv, bv) = (self.value(gamma), self.value(beta));
        let mut xhat = vec![0.0; m * n];
        let mut rstd = vec![0.0; m];
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &xv[i * n..(i + 1) * n];
            let mu = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n as f64;
            let r = 1.0 / (var + eps).sqrt();
            rstd[i] = r;
            for j in 0..n {
                let h = (row[j] - mu) * r;
                xhat[i * n + j] = h;
                out[i * n + j] = gv[j] * h + bv[j];
            }
        }
        let ng = self.needs(x) || self.needs(gamma) || self.needs(beta);
        Ok(self.push(
            vec![m, n],
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            ng,
        ))
    }

    /// Column-wise batch normalisation of `x[m, n]`.
    ///
    /// With `stats = None` the batch mean and (biased) variance are used and
    /// returned; otherwise the supplied running `(mean, var)` are applied.
    #[allow(clippy::type_complexity)]
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: Option<(&[f64], &[f64])>,
        eps: f64,
    ) -> Result<(Var, Option<(Vec<f64>, Vec<f64>)>)> {
        let Some((m, n)) = dims2(self.shape(x)) else {
            return shape_err("batch_norm", self.shape(x), self.shape(gamma));
        };
        if self.shape(gamma) != [n] || self.shape(beta) != [n] {
            return shape_err("batch_norm", self.shape(x), self.shape(gamma));
        }
        if m == 0 {
            return Err(NumError::Invalid("batch_norm on an empty batch".into()));
        }
        let xv = self.value(x);
        let (mean, var, batch_stats) = match stats {
            Some((mu, var)) => {
                if mu.len() != n || var.len() != n {
                    return shape_err("batch_norm", self.shape(x), &[mu.len()]);
                }
                (mu.to_vec(), var.to_vec(), false)
            }
            None => {
                let mut mu = vec![0.0; n];
                for i in 0..m {
                    for j in 0..n {
                        mu[j] += xv[i * n + j];
                    }
                }
                mu.iter_mut().for_each(|v| *v /= m as f64);
                let mut var = vec![0.0; n];
                for i in 0..m {
                    for j in 0..n {
                        let d = xv[i * n + j] - mu[j];
                        var[j] += d * d;
                    }
                }
                var.iter_mut().for_each(|v| *v /= m as f64);
                (mu, var, true)
            }
        };
        let rstd: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let (gv, bv) = (self.value(gamma), self.value(beta));
        let mut xhat = vec![0.0; m * n];
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let h = (xv[i * n + j] - mean[j]) * rstd[j];
                xhat[i * n + j] = h;
                out[i * n + j] = gv[j] * h + bv[j];
            }
        }
        let ng = self.needs(x) || self.needs(gamma) || self.needs(beta);
        let v = self.push(
            vec![m, n],
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
                batch_stats,
            },
            ng,
        );
        Ok((v, batch_stats.then_some((mean, var))))
    }

    /// Fused multi-head scaled dot-product attention.
    ///
    /// `q`, `k`, `v` are `[batch * seq_len, d]` with the sequences stacked
    /// along rows; `key_mask[r]` is `false` for padding positions, which
    /// receive zero attention weight.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        seq_len: usize,
        key_mask: &[bool],
    ) -> Result<Var> {
        self.check_same("attention", q, k)?;
        self.check_same("attention", q, v)?;
        let Some((rows, d)) = dims2(self.shape(q)) else {
            return shape_err("attention", self.shape(q), &[heads]);
        };
        if heads == 0 || d % heads != 0 {
            return Err(NumError::Invalid(format!(
                "model dim {d} not divisible by {heads} heads"
            )));
        }
        if seq_len == 0 || rows % seq_len != 0 || key_mask.len() != rows {
            return shape_err("attention", self.shape(q), &[seq_len, key_mask.len()]);
        }
        let batch = rows / seq_len;
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let l = seq_len;
        let mut probs = vec![0.0; batch * heads * l * l];
        let mut out = vec![0.0; rows * d];
        let mut scores = vec![0.0; l];
        for b in 0..batch {
            let base = b * l;
            let valid = |j: usize| key_mask[base + j];
            for h in 0..heads {
                let c0 = h * dh;
                for i in 0..l {
                    let qi = &qv[(base + i) * d + c0..(base + i) * d + c0 + dh];
                    for (j, s) in scores.iter_mut().enumerate() {
                        let kj = &kv[(base + j) * d + c0..(base + j) * d + c0 + dh];
                        *s = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale;
                    }
                    let p = &mut probs[((b * heads + h) * l + i) * l..((b * heads + h) * l + i + 1) * l];
                    softmax_into(&scores, valid, p);
                    let o = &mut out[(base + i) * d + c0..(base + i) * d + c0 + dh];
                    for (j, &pj) in p.iter().enumerate() {
                        if pj == 0.0 {
                            continue;
                        }
                        let vj = &vv[(base + j) * d + c0..(base + j) * d + c0 + dh];
                        for (oc, vc) in o.iter_mut().zip(vj) {
                            *oc += pj * vc;
                        }
                    }
                }
            }
        }
        let ng = self.needs(q) || self.needs(k) || self.needs(v);
        Ok(self.push(
            vec![rows, d],
            out,
            Op::Attention {
                q,
                k,
                v,
                heads,
                seq_len,
                probs,
            },
            ng,
        ))
    }

    /// Queues a running-statistic update for the tensor with `key`; applied
    /// by [`Graph::apply_stat_updates`].
    pub fn record_stat(&mut self, key: u64, values: Vec<f64>) {
        self.stat_updates.push((key, values));
    }

    pub fn apply_stat_updates(&mut self, module: &mut dyn Module) {
        if self.stat_updates.is_empty() {
            return;
        }
        let updates: HashMap<u64, Vec<f64>> = self.stat_updates.drain(..).collect();
        module.visit_mut("", &mut |_, t, _| {
            if let Some(v) = updates.get(&t.key()) {
                t.assign(v).expect("running statistic keeps its shape");
            }
        });
    }

    /// Gradient of a node after [`Graph::backward`].
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Pushes parameter gradients from the last backward pass into `module`.
    pub fn accumulate_grads(&self, module: &mut dyn Module) -> Result<()> {
        let mut result = Ok(());
        module.visit_mut("", &mut |_, t, _| {
            if !t.requires_grad() || result.is_err() {
                return;
            }
            if let Some(v) = self.params.get(&t.key()) {
                if let Some(g) = self.grad(*v) {
                    result = t.accumulate_grad(g);
                }
            }
        });
        result
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(NumError::Invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            backprop(&self.nodes, i, &g, &mut grads);
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax_into(row: &[f64], valid: impl Fn(usize) -> bool, out: &mut [f64]) {
    let mut mx = f64::NEG_INFINITY;
    for (j, &x) in row.iter().enumerate() {
        if valid(j) && x > mx {
            mx = x;
        }
    }
    if mx == f64::NEG_INFINITY {
        out.iter_mut().for_each(|o| *o = 0.0);
        return;
    }
    let mut total = 0.0;
    for (j, (&x, o)) in row.iter().zip(out.iter_mut()).enumerate() {
        *o = if valid(j) { (x - mx).exp() } else { 0.0 };
        total += *o;
    }
    out.iter_mut().for_each(|o| *o /= total);
}

fn slot<'a>(grads: &'a mut [Option<Vec<f64>>], nodes: &[Node], v: Var) -> Option<&'a mut Vec<f64>> {
    let node = &nodes[v.0];
    if !node.needs_grad {
        return None;
    }
    let len = node.value.len();
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; len]))
}

fn add_into(grads: &mut [Option<Vec<f64>>], nodes: &[Node], v: Var, g: impl Iterator<Item = f64>) {
    if let Some(buf) = slot(grads, nodes, v) {
        buf.iter_mut().zip(g).for_each(|(b, x)| *b += x);
    }
}

fn backprop(nodes: &[Node], i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let node = &nodes[i];
    let out = &node.value;
    match &node.op {
        Op::Leaf | Op::Param => {}
        Op::MatMul(a, b) => {
            let (m, k) = dims2(&nodes[a.0].shape).unwrap();
            let n = nodes[b.0].shape[1];
            if let Some(buf) = slot(grads, nodes, *a) {
                gemm(m, n, k, g, false, &nodes[b.0].value, true, 1.0, buf);
            }
            if let Some(buf) = slot(grads, nodes, *b) {
                gemm(k, m, n, &nodes[a.0].value, true, g, false, 1.0, buf);
            }
        }
        Op::Add(a, b) => {
            add_into(grads, nodes, *a, g.iter().copied());
            add_into(grads, nodes, *b, g.iter().copied());
        }
        Op::Sub(a, b) => {
            add_into(grads, nodes, *a, g.iter().copied());
            add_into(grads, nodes, *b, g.iter().map(|x| -x));
        }
        Op::Mul(a, b) => {
            let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
            add_into(grads, nodes, *a, g.iter().zip(bv).map(|(x, y)| x * y));
            add_into(grads, nodes, *b, g.iter().zip(av).map(|(x, y)| x * y));
        }
        Op::AddRow(a, b) => {
            add_into(grads, nodes, *a, g.iter().copied());
            if let Some(buf) = slot(grads, nodes, *b) {
                let n = buf.len();
                for (idx, x) in g.iter().enumerate() {
                    buf[idx % n] += x;
                }
            }
        }
        Op::MulConst(a, c) => add_into(grads, nodes, *a, g.iter().zip(c).map(|(x, y)| x * y)),
        Op::Blend { a, b, weights } => {
            let n = node.shape[1];
            add_into(
                grads,
                nodes,
                *a,
                g.iter().enumerate().map(|(idx, x)| weights[idx / n] * x),
            );
            add_into(
                grads,
                nodes,
                *b,
                g.iter()
                    .enumerate()
                    .map(|(idx, x)| (1.0 - weights[idx / n]) * x),
            );
        }
        Op::Scale(a, s) => add_into(grads, nodes, *a, g.iter().map(|x| x * s)),
        Op::AddScalar(a) => add_into(grads, nodes, *a, g.iter().copied()),
        Op::Relu(a) => add_into(
            grads,
            nodes,
            *a,
            g.iter()
                .zip(out)
                .map(|(x, y)| if *y > 0.0 { *x } else { 0.0 }),
        ),
        Op::Tanh(a) => add_into(grads, nodes, *a, g.iter().zip(out).map(|(x, y)| x * (1.0 - y * y))),
        Op::Sigmoid(a) => {
            add_into(grads, nodes, *a, g.iter().zip(out).map(|(x, y)| x * y * (1.0 - y)))
        }
        Op::Softmax(a) => {
            let (m, n) = dims2(&node.shape).unwrap();
            if let Some(buf) = slot(grads, nodes, *a) {
                for r in 0..m {
                    let y = &out[r * n..(r + 1) * n];
                    let gr = &g[r * n..(r + 1) * n];
                    let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..n {
                        buf[r * n + j] += y[j] * (gr[j] - dot);
                    }
                }
            }
        }
        Op::ConcatCols(parts) => {
            let (m, total) = dims2(&node.shape).unwrap();
            let mut off = 0;
            for p in parts {
                let w = nodes[p.0].shape[1];
                if let Some(buf) = slot(grads, nodes, *p) {
                    for r in 0..m {
                        for j in 0..w {
                            buf[r * w + j] += g[r * total + off + j];
                        }
                    }
                }
                off += w;
            }
        }
        Op::ConcatRows(parts) => {
            let mut off = 0;
            for p in parts {
                let len = nodes[p.0].value.len();
                add_into(grads, nodes, *p, g[off..off + len].iter().copied());
                off += len;
            }
        }
        Op::SliceCols(a, start) => {
            let (m, w) = dims2(&node.shape).unwrap();
            let n = nodes[a.0].shape[1];
            if let Some(buf) = slot(grads, nodes, *a) {
                for r in 0..m {
                    for j in 0..w {
                        buf[r * n + start + j] += g[r * w + j];
                    }
                }
            }
        }
        Op::GatherRows(a, idx) => {
            let n = node.shape[1];
            if let Some(buf) = slot(grads, nodes, *a) {
                for (r, &src) in idx.iter().enumerate() {
                    for j in 0..n {
                        buf[src * n + j] += g[r * n + j];
                    }
                }
            }
        }
        Op::Mean(a) => {
            let len = nodes[a.0].value.len().max(1) as f64;
            let s = g[0] / len;
            add_into(grads, nodes, *a, std::iter::repeat(s));
        }
        Op::Sum(a) => add_into(grads, nodes, *a, std::iter::repeat(g[0])),
        Op::MeanAxis(a, axis) => {
            let (m, n) = dims2(&nodes[a.0].shape).unwrap();
            if let Some(buf) = slot(grads, nodes, *a) {
                for r in 0..m {
                    for j in 0..n {
                        buf[r * n + j] += if *axis == 0 {
                            g[j] / m as f64
                        } else {
                            g[r] / n as f64
                        };
                    }
                }
            }
        }
        Op::Bce { p, y } => {
            let n = y.len().max(1) as f64;
            let pv = &nodes[p.0].value;
            add_into(
                grads,
                nodes,
                *p,
                pv.iter().zip(y).map(|(&pi, &yi)| {
                    let pc = pi.clamp(BCE_EPS, 1.0 - BCE_EPS);
                    g[0] * (-yi / pc + (1.0 - yi) / (1.0 - pc)) / n
                }),
            );
        }
        Op::BceLogits { z, y } => {
            let n = y.len().max(1) as f64;
            let zv = &nodes[z.0].value;
            add_into(
                grads,
                nodes,
                *z,
                zv.iter()
                    .zip(y)
                    .map(|(&zi, &yi)| g[0] * (sigmoid(zi) - yi) / n),
            );
        }
        Op::LayerNorm {
            x,
            gamma,
            beta,
            xhat,
            rstd,
        } => {
            let (m, n) = dims2(&node.shape).unwrap();
            let gv = &nodes[gamma.0].value;
            if let Some(buf) = slot(grads, nodes, *gamma) {
                for idx in 0..m * n {
                    buf[idx % n] += g[idx] * xhat[idx];
                }
            }
            if let Some(buf) = slot(grads, nodes, *beta) {
                for idx in 0..m * n {
                    buf[idx % n] += g[idx];
                }
            }
            if let Some(buf) = slot(grads, nodes, *x) {
                let nf = n as f64;
                for r in 0..m {
                    let mut s1 = 0.0;
                    let mut s2 = 0.0;
                    for j in 0..n {
                        let dh = g[r * n + j] * gv[j];
                        s1 += dh;
                        s2 += dh * xhat[r * n + j];
                    }
                    for j in 0..n {
                        let dh = g[r * n + j] * gv[j];
                        buf[r * n + j] += rstd[r] / nf * (nf * dh - s1 - xhat[r * n + j] * s2);
                    }
                }
            }
        }
        Op::BatchNorm {
            x,
            gamma,
            beta,
            xhat,
            rstd,
            batch_stats,
        } => {
            let (m, n) = dims2(&node.shape).unwrap();
            let gv = &nodes[gamma.0].value;
            if let Some(buf) = slot(grads, nodes, *gamma) {
                for idx in 0..m * n {
                    buf[idx % n] += g[idx] * xhat[idx];
                }
            }
            if let Some(buf) = slot(grads, nodes, *beta) {
                for idx in 0..m * n {
                    buf[idx % n] += g[idx];
                }
            }
            if let Some(buf) = slot(grads, nodes, *x) {
                if *batch_stats {
                    let mf = m as f64;
                    for j in 0..n {
                        let mut s1 = 0.0;
                        let mut s2 = 0.0;
                        for r in 0..m {
                            let dh = g[r * n + j] * gv[j];
                            s1 += dh;
                            s2 += dh * xhat[r * n + j];
                        }
                        for r in 0..m {
                            let dh = g[r * n + j] * gv[j];
                            buf[r * n + j] +=
                                rstd[j] / mf * (mf * dh - s1 - xhat[r * n + j] * s2);
                        }
                    }
                } else {
                    for idx in 0..m * n {
                        buf[idx] += g[idx] * gv[idx % n] * rstd[idx % n];
                    }
                }
            }
        }
        Op::Attention {
            q,
            k,
            v,
            heads,
            seq_len,
            probs,
        } => attention_backward(nodes, g, grads, (*q, *k, *v), *heads, *seq_len, probs),
    }
}

fn attention_backward(
    nodes: &[Node],
    g: &[f64],
    grads: &mut [Option<Vec<f64>>],
    (q, k, v): (Var, Var, Var),
    heads: usize,
    l: usize,
    probs: &[f64],
) {
    let (rows, d) = dims2(&nodes[q.0].shape).unwrap();
    let batch = rows / l;
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let (qv, kv, vv) = (&nodes[q.0].value, &nodes[k.0].value, &nodes[v.0].value);
    let mut dq = vec![0.0; rows * d];
    let mut dk = vec![0.0; rows * d];
    let mut dv = vec![0.0; rows * d];
    let mut dp = vec![0.0; l];
    for b in 0..batch {
        let base = b * l;
        for h in 0..heads {
            let c0 = h * dh;
            for i in 0..l {
                let p = &probs[((b * heads + h) * l + i) * l..((b * heads + h) * l + i + 1) * l];
                let go = &g[(base + i) * d + c0..(base + i) * d + c0 + dh];
                for j in 0..l {
                    let vj = &vv[(base + j) * d + c0..(base + j) * d + c0 + dh];
                    dp[j] = go.iter().zip(vj).map(|(a, b)| a * b).sum();
                    if p[j] != 0.0 {
                        let dvj = &mut dv[(base + j) * d + c0..(base + j) * d + c0 + dh];
                        for (x, y) in dvj.iter_mut().zip(go) {
                            *x += p[j] * y;
                        }
                    }
                }
                let dot: f64 = p.iter().zip(&dp).map(|(a, b)| a * b).sum();
                for j in 0..l {
                    let ds = p[j] * (dp[j] - dot) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    for c in 0..dh {
                        dq[(base + i) * d + c0 + c] += ds * kv[(base + j) * d + c0 + c];
                        dk[(base + j) * d + c0 + c] += ds * qv[(base + i) * d + c0 + c];
                    }
                }
            }
        }
    }
    add_into(grads, nodes, q, dq.into_iter());
    add_into(grads, nodes, k, dk.into_iter());
    add_into(grads, nodes, v, dv.into_iter());
}
