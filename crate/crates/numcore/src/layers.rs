//! Layer kit: dense, batch norm, dropout, layer norm, GRU, embedding and
//! transformer encoder blocks.

use rand::Rng;

use crate::error::{NumError, Result};
use crate::graph::{Graph, Var};
use crate::module::{join, Module, ParamRef};
use crate::tensor::Tensor;

pub const NORM_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

/// `y = x W + b` with `W: [in, out]`.
#[derive(Clone, Debug)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Dense {
    pub fn new<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        Self {
            weight: Tensor::glorot(input, output, rng).trainable(),
            bias: Tensor::zeros(&[output]).trainable(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn output_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let w = g.param(&self.weight);
        let b = g.param(&self.bias);
        let xw = g.matmul(x, w)?;
        g.add_row(xw, b)
    }
}

impl Module for Dense {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor, ParamRef)) {
        f(&join(prefix, "weight"), &self.weight, ParamRef::Weight);
        f(&join(prefix, "bias"), &self.bias, ParamRef::Weight);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor, ParamRef)) {
        f(&join(prefix, "weight"), &mut self.weight, ParamRef::Weight);
        f(&join(prefix, "bias"), &mut self.bias, ParamRef::Weight);
    }
}

/// Batch normalisation over the feature columns of `[batch, features]`.
///
/// Running statistics follow `running = momentum * running + (1 - momentum) * batch`.
#[derive(Clone, Debug)]
pub struct BatchNorm1d {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm1d {
    pub fn new(features: usize) -> Self {
        Self {
            gamma: Tensor::full(&[features], 1.0).trainable(),
            beta: Tensor::zeros(&[features]).trainable(),
            running_mean: Tensor::zeros(&[features]),
            running_var: Tensor::full(&[features], 1.0),
            momentum: BN_MOMENTUM,
            eps: NORM_EPS,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var, train: bool) -> Result<Var> {
        let gamma = g.param(&self.gamma);
        let beta = g.param(&self.beta);
        if train {
            let (y, stats) = g.batch_norm(x, gamma, beta, None, self.eps)?;
            let (mu, var) = stats.expect("batch statistics requested");
            let m = self.momentum;
            let blend = |run: &[f64], batch: &[f64]| -> Vec<f64> {
                run.iter()
                    .zip(batch)
                    .map(|(r, b)| m * r + (1.0 - m) * b)
                    .collect()
            };
            let new_mean = blend(self.running_mean.data(), &mu);
            let new_var = blend(self.running_var.data(), &var);
            g.record_stat(self.running_mean.key(), new_mean);
            g.record_stat(self.running_var.key(), new_var);
            Ok(y)
        } else {
            let stats = (self.running_mean.data(), self.running_var.data());
            Ok(g.batch_norm(x, gamma, beta, Some(stats), self.eps)?.0)
        }
    }
}

impl Module for BatchNorm1d {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor, ParamRef)) {
        f(&join(prefix, "gamma"), &self.gamma, ParamRef::Weight);
        f(&join(prefix, "beta"), &self.beta, ParamRef::Weight);
        f(&join(prefix, "running_mean"), &self.running_mean, ParamRef::Buffer);
        f(&join(prefix, "running_var"), &self.running_var, ParamRef::Buffer);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor, ParamRef)) {
        f(&join(prefix, "gamma"), &mut self.gamma, ParamRef::Weight);
        f(&join(prefix, "beta"), &mut self.beta, ParamRef::Weight);
        f(
            &join(prefix, "running_mean"),
            &mut self.running_mean,
            ParamRef::Buffer,
        );
        f(
            &join(prefix, "running_var"),
            &mut self.running_var,
            ParamRef::Buffer,
        );
    }
}

/// Inverted dropout: kept activations are scaled by `1 / (1 - rate)` during
/// training, so evaluation is the identity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dropout {
    pub rate: f64,
}

impl Dropout {
    pub fn new(rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(NumError::Invalid(format!("dropout rate {rate} not in [0, 1)")));
        }
        Ok(Self { rate })
    }

    pub fn forward(&self, g: &mut Graph, x: Var, train: bool) -> Result<Var> {
        if !train || self.rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - self.rate);
        let n = g.value(x).len();
        let rate = self.rate;
        let mask: Vec<f64> = (0..n)
            .map(|_| {
                if g.rng().random::<f64>() < rate {
                    0.0
                } else {
                    keep
                }
            })
            .collect();
        g.mul_const(x, mask)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(features: usize) -> Self {
        Self {
            gamma: Tensor::full(&[features], 1.0).trainable(),
            beta: Tensor::zeros(&[features]).trainable(),
            eps: NORM_EPS,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let gamma = g.param(&self.gamma);
        let beta = g.param(&self.beta);
        g.layer_norm(x, gamma, beta, self.eps)
    }
}

impl Module for LayerNorm {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor, ParamRef)) {
        f(&join(prefix, "gamma"), &self.gamma, ParamRef::Weight);
        f(&join(prefix, "beta"), &self.beta, ParamRef::Weight);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor, ParamRef)) {
        f(&join(prefix, "gamma"), &mut self.gamma, ParamRef::Weight);
        f(&join(prefix, "beta"), &mut self.beta, ParamRef::Weight);
    }
}

/// Gated recurrent unit cell.
///
/// ```text
/// r  = sigmoid(x W_ir + b_ir + h W_hr + b_hr)
/// z  = sigmoid(x W_iz + b_iz + h W_hz + b_hz)
/// n  = tanh(x W_in + b_in + r * (h W_hn + b_hn))
/// h' = (1 - z) * n + z * h
/// ```
///
/// Gate blocks are packed along the output axis in `r, z, n` order.
#[derive(Clone, Debug)]
pub struct GruCell {
    pub w_ih: Tensor,
    pub w_hh: Tensor,
    pub b_ih: Tensor,
    pub b_hh: Tensor,
}

impl GruCell {
    /// Weights uniform in `±1/sqrt(hidden)`.
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Result<Self> {
        if hidden == 0 || input == 0 {
            return Err(NumError::Invalid(format!(
                "GRU needs positive sizes, got input {input} hidden {hidden}"
            )));
        }
        let k = 1.0 / (hidden as f64).sqrt();
        Ok(Self {
            w_ih: Tensor::uniform(&[input, 3 * hidden], k, rng).trainable(),
            w_hh: Tensor::uniform(&[hidden, 3 * hidden], k, rng).trainable(),
            b_ih: Tensor::uniform(&[3 * hidden], k, rng).trainable(),
            b_hh: Tensor::uniform(&[3 * hidden], k, rng).trainable(),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.w_ih.shape()[0]
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_hh.shape()[0]
    }

    pub fn step(&self, g: &mut Graph, x: Var, h: Var) -> Result<Var> {
        let hd = self.hidden_dim();
        let w_ih = g.param(&self.w_ih);
        let w_hh = g.param(&self.w_hh);
        let b_ih = g.param(&self.b_ih);
        let b_hh = g.param(&self.b_hh);
        let gi = g.matmul(x, w_ih)?;
        let gi = g.add_row(gi, b_ih)?;
        let gh = g.matmul(h, w_hh)?;
        let gh = g.add_row(gh, b_hh)?;
        let i_r = g.slice_cols(gi, 0, hd)?;
        let i_z = g.slice_cols(gi, hd, 2 * hd)?;
        let i_n = g.slice_cols(gi, 2 * hd, 3 * hd)?;
        let h_r = g.slice_cols(gh, 0, hd)?;
        let h_z = g.slice_cols(gh, hd, 2 * hd)?;
        let h_n = g.slice_cols(gh, 2 * hd, 3 * hd)?;
        let r = g.add(i_r, h_r)?;
        let r = g.sigmoid(r);
        let z = g.add(i_z, h_z)?;
        let z = g.sigmoid(z);
        let rh = g.mul(r, h_n)?;
        let n = g.add(i_n, rh)?;
        let n = g.tanh(n);
        // h' = n + z * (h - n)
        let diff = g.sub(h, n)?;
        let zd = g.mul(z, diff)?;
        g.add(n, zd)
    }

    /// Runs the cell over `steps` (each `[batch, input]`) from a zero state and
    /// returns the final hidden state. Where `step_mask[t][b]` is 0 the state of
    /// row `b` is carried over unchanged (padding).
    pub fn run(&self, g: &mut Graph, steps: &[Var], step_mask: Option<&[Vec<f64>]>) -> Result<Var> {
        let first = *steps
            .first()
            .ok_or_else(|| NumError::Invalid("GRU over an empty sequence".into()))?;
        let batch = g.shape(first)[0];
        let mut h = g.input(&[batch, self.hidden_dim()], vec![0.0; batch * self.hidden_dim()])?;
        for (t, x) in steps.iter().enumerate() {
            let next = self.step(g, *x, h)?;
            h = match step_mask {
                Some(mask) if mask[t].iter().any(|m| *m != 1.0) => {
                    g.blend_rows(next, h, mask[t].clone())?
                }
                _ => next,
            };
        }
        Ok(h)
    }
}

impl Module for GruCell {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor, ParamRef)) {
        f(&join(prefix, "w_ih"), &self.w_ih, ParamRef::Weight);
        f(&join(prefix, "w_hh"), &self.w_hh, ParamRef::Weight);
        f(&join(prefix, "b_ih"), &self.b_ih, ParamRef::Weight);
        f(&join(prefix, "b_hh"), &self.b_hh, ParamRef::Weight);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor, ParamRef)) {
        f(&join(prefix, "w_ih"), &mut self.w_ih, ParamRef::Weight);
        f(&join(prefix, "w_hh"), &mut self.w_hh, ParamRef::Weight);
        f(&join(prefix, "b_ih"), &mut self.b_ih, ParamRef::Weight);
        f(&join(prefix, "b_hh"), &mut self.b_hh, ParamRef::Weight);
    }
}

#[derive(Clone, Debug)]
pub struct Embedding {
    pub weight: Tensor,
}

impl Embedding {
    pub fn new<R: Rng + ?Sized>(vocab: usize, dim: usize, rng: &mut R) -> Self {
        Self {
            weight: Tensor::uniform(&[vocab, dim], 0.1, rng).trainable(),
        }
    }

    pub fn vocab(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn forward(&self, g: &mut Graph, ids: &[usize]) -> Result<Var> {
        let w = g.param(&self.weight);
        g.gather_rows(w, ids)
    }
}

impl Module for Embedding {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor, ParamRef)) {
        f(&join(prefix, "weight"), &self.weight, ParamRef::Weight);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor, ParamRef)) {
        f(&join(prefix, "weight"), &mut self.weight, ParamRef::Weight);
    }
}

/// Sinusoidal position table `[seq_len, dim]`, row-major.
pub fn positional_encoding(seq_len: usize, dim: usize) -> Vec<f64> {
    let mut pe = vec![0.0; seq_len * dim];
    for pos in 0..seq_len {
        for i in 0..dim {
            let angle = pos as f64 / 10000f64.powf((2 * (i / 2)) as f64 / dim as f64);
            pe[pos * dim + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    pe
}

#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub query: Dense,
    pub key: Dense,
    pub value: Dense,
    pub output: Dense,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new<R: Rng + ?Sized>(dim: usize, heads: usize, rng: &mut R) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(NumError::Invalid(format!(
                "model dim {dim} not divisible by {heads} heads"
            )));
        }
        Ok(Self {
            query: Dense::new(dim, dim, rng),
            key: Dense::new(dim, dim, rng),
            value: Dense::new(dim, dim, rng),
            output: Dense::new(dim, dim, rng),
            heads,
        })
    }

    /// `x` is `[batch * seq_len, dim]`; `key_mask` marks real (non-PAD) rows.
    pub fn forward(&self, g: &mut Graph, x: Var, seq_len: usize, key_mask: &[bool]) -> Result<Var> {
        let q = self.query.forward(g, x)?;
        let k = self.key.forward(g, x)?;
        let v = self.value.forward(g, x)?;
        let a = g.attention(q, k, v, self.heads, seq_len, key_mask)?;
        self.output.forward(g, a)
    }
}

impl Module for MultiHeadAttention {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor, ParamRef)) {
        self.query.visit(&join(prefix, "query"), f);
        self.key.visit(&join(prefix, "key"), f);
        self.value.visit(&join(prefix, "value"), f);
        self.output.visit(&join(prefix, "output"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor, ParamRef)) {
        self.query.visit_mut(&join(prefix, "query"), f);
        self.key.visit_mut(&join(prefix, "key"), f);
        self.value.visit_mut(&join(prefix, "value"), f);
        self.output.visit_mut(&join(prefix, "output"), f);
    }
}

/// Post-norm encoder block:
/// `x1 = LN(x + MHA(x))`, `out = LN(x1 + W2 relu(W1 x1))`.
#[derive(Clone, Debug)]
pub struct TransformerBlock {
    pub attention: MultiHeadAttention,
    pub norm1: LayerNorm,
    pub ff_in: Dense,
    pub ff_out: Dense,
    pub norm2: LayerNorm,
}

impl TransformerBlock {
    pub fn new<R: Rng + ?Sized>(dim: usize, heads: usize, ff_dim: usize, rng: &mut R) -> Result<Self> {
        Ok(Self {
            attention: MultiHeadAttention::new(dim, heads, rng)?,
            norm1: LayerNorm::new(dim),
            ff_in: Dense::new(dim, ff_dim, rng),
            ff_out: Dense::new(ff_dim, dim, rng),
            norm2: LayerNorm::new(dim),
        })
    }

    pub fn forward(&self, g: &mut Graph, x: Var, seq_len: usize, key_mask: &[bool]) -> Result<Var> {
        let a = self.attention.forward(g, x, seq_len, key_mask)?;
        let r1 = g.add(x, a)?;
        let x1 = self.norm1.forward(g, r1)?;
        let h = self.ff_in.forward(g, x1)?;
        let h = g.relu(h);
        let f = self.ff_out.forward(g, h)?;
        let r2 = g.add(x1, f)?;
        self.norm2.forward(g, r2)
    }
}

impl Module for TransformerBlock {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor, ParamRef)) {
        self.attention.visit(&join(prefix, "attention"), f);
        self.norm1.visit(&join(prefix, "norm1"), f);
        self.ff_in.visit(&join(prefix, "ff_in"), f);
        self.ff_out.visit(&join(prefix, "ff_out"), f);
        self.norm2.visit(&join(prefix, "norm2"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor, ParamRef)) {
        self.attention.visit_mut(&join(prefix, "attention"), f);
        self.norm1.visit_mut(&join(prefix, "norm1"), f);
        self.ff_in.visit_mut(&join(prefix, "ff_in"), f);
        self.ff_out.visit_mut(&join(prefix, "ff_out"), f);
        self.norm2.visit_mut(&join(prefix, "norm2"), f);
    }
}

impl<M: Module> Module for Vec<M> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor, ParamRef)) {
        for (i, m) in self.iter().enumerate() {
            m.visit(&join(prefix, &i.to_string()), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor, ParamRef)) {
        for (i, m) in self.iter_mut().enumerate() {
            m.visit_mut(&join(prefix, &i.to_string()), f);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(11)
    }

    #[test]
    fn gru_with_zero_weights_halves_state() {
        // z = sigmoid(0) = 0.5, n = tanh(0) = 0, so h' = 0.5 * h.
        let mut cell = GruCell::new(3, 2, &mut rng()).unwrap();
        cell.visit_mut("", &mut |_, t, _| t.data_mut().iter_mut().for_each(|v| *v = 0.0));
        let mut g = Graph::new(0);
        let x = g.input(&[1, 3], vec![0.7, -1.2, 3.0]).unwrap();
        let h = g.input(&[1, 2], vec![0.8, -0.4]).unwrap();
        let out = cell.step(&mut g, x, h).unwrap();
        assert_eq!(g.value(out), &[0.4, -0.2]);
    }

    #[test]
    fn gru_zero_state_zero_candidate_stays_zero() {
        let mut cell = GruCell::new(2, 3, &mut rng()).unwrap();
        // zero the candidate block of both weight matrices and biases
        for t in [&mut cell.w_ih, &mut cell.w_hh] {
            let cols = t.shape()[1];
            let rows = t.shape()[0];
            for r in 0..rows {
                for c in 2 * cols / 3..cols {
                    t.data_mut()[r * cols + c] = 0.0;
                }
            }
        }
        for t in [&mut cell.b_ih, &mut cell.b_hh] {
            let n = t.len();
            t.data_mut()[2 * n / 3..].iter_mut().for_each(|v| *v = 0.0);
        }
        let mut g = Graph::new(0);
        let x = g.input(&[1, 2], vec![1.5, -0.5]).unwrap();
        let h = g.input(&[1, 3], vec![0.0; 3]).unwrap();
        let out = cell.step(&mut g, x, h).unwrap();
        assert!(g.value(out).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn gru_state_bounded() {
        let cell = GruCell::new(4, 5, &mut rng()).unwrap();
        let mut g = Graph::new(0);
        let steps: Vec<Var> = (0..6)
            .map(|t| g.input(&[2, 4], vec![10.0 * (t as f64 - 3.0); 8]).unwrap())
            .collect();
        let h = cell.run(&mut g, &steps, None).unwrap();
        assert!(g.value(h).iter().all(|v| v.abs() < 1.0));
    }

    #[test]
    fn gru_masked_step_carries_state() {
        let cell = GruCell::new(2, 3, &mut rng()).unwrap();
        let mut g = Graph::new(0);
        let a = g.input(&[1, 2], vec![0.3, 0.1]).unwrap();
        let pad = g.input(&[1, 2], vec![5.0, 5.0]).unwrap();
        let h1 = cell.run(&mut g, &[a], None).unwrap();
        let h2 = cell
            .run(&mut g, &[a, pad], Some(&[vec![1.0], vec![0.0]]))
            .unwrap();
        assert_eq!(g.value(h1), g.value(h2));
    }

    #[test]
    fn batchnorm_eval_is_deterministic() {
        let bn = BatchNorm1d::new(3);
        let x = vec![1.0, 2.0, 3.0, -1.0, 0.5, 2.0];
        let run = |seed| {
            let mut g = Graph::new(seed);
            let v = g.input(&[2, 3], x.clone()).unwrap();
            let y = bn.forward(&mut g, v, false).unwrap();
            g.value(y).to_vec()
        };
        assert_eq!(run(1), run(2));
    }

    #[test]
    fn batchnorm_running_stats_converge_on_constant_batches() {
        let mut bn = BatchNorm1d::new(2);
        let x = vec![1.0, 10.0, 3.0, 14.0, 5.0, 12.0];
        for _ in 0..300 {
            let mut g = Graph::new(0);
            let v = g.input(&[3, 2], x.clone()).unwrap();
            bn.forward(&mut g, v, true).unwrap();
            g.apply_stat_updates(&mut bn);
        }
        let mean = bn.running_mean.data();
        let var = bn.running_var.data();
        assert!((mean[0] - 3.0).abs() < 1e-9 && (mean[1] - 12.0).abs() < 1e-9);
        assert!((var[0] - 8.0 / 3.0).abs() < 1e-9 && (var[1] - 8.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn dropout_expectation_matches_eval() {
        let d = Dropout::new(0.3).unwrap();
        let x: Vec<f64> = (0..10).map(|i| 1.0 + i as f64).collect();
        let mut g = Graph::new(5);
        let v = g.input(&[1, 10], x.clone()).unwrap();
        let eval = d.forward(&mut g, v, false).unwrap();
        assert_eq!(g.value(eval), x.as_slice());
        let trials = 10_000;
        let mut acc = vec![0.0; 10];
        for _ in 0..trials {
            let y = d.forward(&mut g, v, true).unwrap();
            acc.iter_mut().zip(g.value(y)).for_each(|(a, b)| *a += b);
        }
        for (a, want) in acc.iter().zip(&x) {
            let mean = a / trials as f64;
            assert!((mean - want).abs() / want < 0.02, "{mean} vs {want}");
        }
    }

    #[test]
    fn attention_rejects_bad_head_count() {
        assert!(MultiHeadAttention::new(10, 3, &mut rng()).is_err());
        assert!(TransformerBlock::new(8, 3, 16, &mut rng()).is_err());
    }

    #[test]
    fn single_token_block_is_residual_ffn_of_itself() {
        let block = TransformerBlock::new(4, 2, 8, &mut rng()).unwrap();
        let x = vec![0.3, -0.7, 1.1, 0.2];
        let mut g = Graph::new(0);
        let xv = g.input(&[1, 4], x.clone()).unwrap();
        let out = block.forward(&mut g, xv, 1, &[true]).unwrap();
        let got = g.value(out).to_vec();

        // attention weight is 1 on itself: MHA(x) = Wo (Wv x + bv) + bo
        let mut h = Graph::new(0);
        let xv = h.input(&[1, 4], x).unwrap();
        let v = block.attention.value.forward(&mut h, xv).unwrap();
        let a = block.attention.output.forward(&mut h, v).unwrap();
        let r1 = h.add(xv, a).unwrap();
        let x1 = block.norm1.forward(&mut h, r1).unwrap();
        let f = block.ff_in.forward(&mut h, x1).unwrap();
        let f = h.relu(f);
        let f = block.ff_out.forward(&mut h, f).unwrap();
        let r2 = h.add(x1, f).unwrap();
        let want = block.norm2.forward(&mut h, r2).unwrap();
        for (a, b) in got.iter().zip(h.value(want)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn block_is_permutation_equivariant_without_positions() {
        let block = TransformerBlock::new(4, 2, 8, &mut rng()).unwrap();
        let tok_a = [0.5, -0.1, 0.3, 0.9];
        let tok_b = [-0.4, 0.8, 0.0, 0.1];
        let seq = |order: &[&[f64; 4]]| -> Vec<f64> {
            let data: Vec<f64> = order.iter().flat_map(|t| t.iter().copied()).collect();
            let mut g = Graph::new(0);
            let x = g.input(&[3, 4], data).unwrap();
            let y = block.forward(&mut g, x, 3, &[true; 3]).unwrap();
            g.value(y).to_vec()
        };
        let y1 = seq(&[&tok_a, &tok_b, &tok_a]);
        let y2 = seq(&[&tok_b, &tok_a, &tok_a]);
        // rows 0 and 1 swap, row 2 unchanged
        for c in 0..4 {
            assert!((y1[c] - y2[4 + c]).abs() < 1e-12);
            assert!((y1[4 + c] - y2[c]).abs() < 1e-12);
            assert!((y1[8 + c] - y2[8 + c]).abs() < 1e-12);
        }
    }

    #[test]
    fn padding_does_not_change_real_positions() {
        let block = TransformerBlock::new(4, 2, 8, &mut rng()).unwrap();
        let real = vec![0.5, -0.1, 0.3, 0.9, -0.4, 0.8, 0.0, 0.1];
        let mut g = Graph::new(0);
        let x = g.input(&[2, 4], real.clone()).unwrap();
        let y = block.forward(&mut g, x, 2, &[true, true]).unwrap();
        let mut padded = real;
        padded.extend([9.0, 9.0, -9.0, 3.0]);
        let x2 = g.input(&[3, 4], padded).unwrap();
        let y2 = block.forward(&mut g, x2, 3, &[true, true, false]).unwrap();
        for (a, b) in g.value(y).iter().zip(&g.value(y2)[..8]) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
