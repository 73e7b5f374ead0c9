//! Deep classifiers: MLP for tables, GRU for monthly series and a small
//! transformer + GRU for note tokens. Every net is an [`Encoder`] producing
//! a latent row per sample followed by a single-logit dense head; the
//! encoder is what intermediate fusion reuses.

use numcore::layers::{positional_encoding, BatchNorm1d, Dense, Dropout, Embedding, GruCell, TransformerBlock};
use numcore::{join, Adam, AdamConfig, Graph, Module, ParamRef, Tensor, Var};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::linear::sigmoid;
use super::scale::Scaler;
use super::train::{predict_logits, train_module, TrainConfig};
use super::{Features, HyperParams};
use crate::error::{Error, Result};
use crate::preprocess::tokenizer::{MASK, PAD};

/// Size of the from-scratch text encoder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TextArch {
    pub dim: usize,
    pub heads: usize,
    pub blocks: usize,
    pub ff_dim: usize,
    /// Longest token stream seen by the model; longer streams keep the tail.
    pub max_len: usize,
    /// Masked-token pretraining epochs before supervised fitting; 0 disables.
    pub pretrain_epochs: usize,
    pub mask_rate: f64,
}

impl Default for TextArch {
    fn default() -> Self {
        Self {
            dim: 64,
            heads: 4,
            blocks: 2,
            ff_dim: 128,
            max_len: 512,
            pretrain_epochs: 0,
            mask_rate: 0.15,
        }
    }
}

impl TextArch {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.heads == 0 || self.dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "text model dim {} must be a positive multiple of heads {}",
                self.dim, self.heads
            )));
        }
        if self.ff_dim == 0 || self.max_len == 0 {
            return Err(Error::Config("text ff_dim and max_len must be ≥ 1".into()));
        }
        if !(self.mask_rate > 0.0 && self.mask_rate < 1.0) {
            return Err(Error::Config(format!("mask_rate {} not in (0, 1)", self.mask_rate)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Arch {
    Mlp {
        input: usize,
        hidden: usize,
    },
    Gru {
        channels: usize,
        steps: usize,
        hidden: usize,
    },
    Text {
        vocab: usize,
        dim: usize,
        heads: usize,
        blocks: usize,
        ff_dim: usize,
        max_len: usize,
        hidden: usize,
    },
}

/// Everything needed to rebuild a net before loading its weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetSpec {
    pub arch: Arch,
    pub dropout: f64,
    /// Training prevalence, returned for rows without any input tokens.
    pub prior: f64,
    /// Input standardisation fitted on the training rows (tables and series).
    pub scaler: Option<Scaler>,
}

#[derive(Clone, Debug)]
pub enum Body {
    Mlp {
        dense: Dense,
    },
    Gru {
        gru: GruCell,
    },
    Text {
        embedding: Embedding,
        blocks: Vec<TransformerBlock>,
        gru: GruCell,
    },
}

impl Module for Body {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor, ParamRef)) {
        match self {
            Body::Mlp { dense } => dense.visit(&join(prefix, "dense"), f),
            Body::Gru { gru } => gru.visit(&join(prefix, "gru"), f),
            Body::Text { embedding, blocks, gru } => {
                embedding.visit(&join(prefix, "embedding"), f);
                blocks.visit(&join(prefix, "blocks"), f);
                gru.visit(&join(prefix, "gru"), f);
            }
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor, ParamRef)) {
        match self {
            Body::Mlp { dense } => dense.visit_mut(&join(prefix, "dense"), f),
            Body::Gru { gru } => gru.visit_mut(&join(prefix, "gru"), f),
            Body::Text { embedding, blocks, gru } => {
                embedding.visit_mut(&join(prefix, "embedding"), f);
                blocks.visit_mut(&join(prefix, "blocks"), f);
                gru.visit_mut(&join(prefix, "gru"), f);
            }
        }
    }
}

/// A classifier without its output layer: hidden stack, batch norm and
/// dropout.
#[derive(Clone, Debug)]
pub struct Encoder {
    pub arch: Arch,
    pub scaler: Option<Scaler>,
    pub body: Body,
    pub norm: BatchNorm1d,
    pub dropout: Dropout,
}

impl Module for Encoder {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor, ParamRef)) {
        self.body.visit(&join(prefix, "body"), f);
        self.norm.visit(&join(prefix, "norm"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor, ParamRef)) {
        self.body.visit_mut(&join(prefix, "body"), f);
        self.norm.visit_mut(&join(prefix, "norm"), f);
    }
}

fn shape_error(arch: &Arch, x: &Features) -> Error {
    Error::Inference(format!("network {arch:?} cannot take {} input of this shape", x.shape_name()))
}

/// Tail of a token stream as embedding ids; an empty stream becomes a
/// single attended PAD so the batch stays rectangular.
fn clip_stream(seq: &[u32], max_len: usize) -> Vec<u32> {
    let s: Vec<u32> = seq.iter().copied().filter(|t| *t != PAD).collect();
    let tail = &s[s.len().saturating_sub(max_len)..];
    if tail.is_empty() {
        vec![PAD]
    } else {
        tail.to_vec()
    }
}

/// Embeds padded sequences, adds positions and runs the transformer
/// blocks. Returns `[b·L, dim]` states, `L` and the key mask.
fn text_states(
    g: &mut Graph,
    embedding: &Embedding,
    blocks: &[TransformerBlock],
    seqs: &[Vec<u32>],
) -> Result<(Var, usize, Vec<bool>)> {
    let dim = embedding.dim();
    let len = seqs.iter().map(Vec::len).max().unwrap_or(1).max(1);
    let mut ids = Vec::with_capacity(seqs.len() * len);
    let mut mask = Vec::with_capacity(seqs.len() * len);
    for s in seqs {
        for t in 0..len {
            let id = s.get(t).copied().unwrap_or(PAD) as usize;
            if id >= embedding.vocab() {
                return Err(Error::Inference(format!("token id {id} outside vocabulary of {}", embedding.vocab())));
            }
            ids.push(id);
            mask.push(t < s.len());
        }
    }
    let e = embedding.forward(g, &ids)?;
    let e = g.scale(e, (dim as f64).sqrt());
    let pe = positional_encoding(len, dim);
    let tiled: Vec<f64> = (0..seqs.len()).flat_map(|_| pe.iter().copied()).collect();
    let pe = g.input(&[seqs.len() * len, dim], tiled)?;
    let mut x = g.add(e, pe)?;
    for b in blocks {
        x = b.forward(g, x, len, &mask)?;
    }
    Ok((x, len, mask))
}

impl Encoder {
    pub fn new<R: Rng + ?Sized>(arch: Arch, scaler: Option<Scaler>, dropout: f64, rng: &mut R) -> Result<Self> {
        let body = match &arch {
            Arch::Mlp { input, hidden } => Body::Mlp {
                dense: Dense::new(*input, *hidden, rng),
            },
            Arch::Gru { channels, hidden, .. } => Body::Gru {
                gru: GruCell::new(*channels, *hidden, rng)?,
            },
            Arch::Text {
                vocab,
                dim,
                heads,
                blocks,
                ff_dim,
                hidden,
                ..
            } => Body::Text {
                embedding: Embedding::new(*vocab, *dim, rng),
                blocks: (0..*blocks)
                    .map(|_| TransformerBlock::new(*dim, *heads, *ff_dim, rng))
                    .collect::<numcore::Result<_>>()?,
                gru: GruCell::new(*dim, *hidden, rng)?,
            },
        };
        let latent = latent_of(&arch);
        if latent == 0 {
            return Err(Error::Config("hidden width must be ≥ 1".into()));
        }
        Ok(Self {
            arch,
            scaler,
            body,
            norm: BatchNorm1d::new(latent),
            dropout: Dropout::new(dropout)?,
        })
    }

    pub fn latent_dim(&self) -> usize {
        latent_of(&self.arch)
    }

    /// Rows of `x` whose input is empty (text only).
    pub fn empty_rows(&self, x: &Features) -> Vec<bool> {
        match (x, &self.arch) {
            (Features::Tokens { seqs, .. }, Arch::Text { .. }) => {
                seqs.iter().map(|s| s.iter().all(|t| *t == PAD)).collect()
            }
            _ => vec![false; x.rows()],
        }
    }

    /// `[rows.len(), latent]` representation of the selected rows.
    pub fn forward(&self, g: &mut Graph, x: &Features, rows: &[usize], train: bool) -> Result<Var> {
        let b = rows.len();
        let h = match (&self.body, &self.arch, x) {
            (Body::Mlp { dense }, Arch::Mlp { input, .. }, Features::Tabular { cols, .. }) if cols == input => {
                let raw: Vec<f64> = rows.iter().flat_map(|i| x.row(*i).iter().copied()).collect();
                let data = self.scaler.as_ref().map_or(raw.clone(), |s| s.apply(&raw));
                let xin = g.input(&[b, *input], data)?;
                let z = dense.forward(g, xin)?;
                g.relu(z)
            }
            (Body::Gru { gru }, Arch::Gru { channels, steps, .. }, Features::Series { channels: c, steps: t, .. })
                if c == channels && t == steps =>
            {
                let scaled: Vec<Vec<f64>> = rows
                    .iter()
                    .map(|i| {
                        let r = x.row(*i);
                        self.scaler.as_ref().map_or(r.to_vec(), |s| s.apply(r))
                    })
                    .collect();
                let mut inputs = Vec::with_capacity(*steps);
                for t in 0..*steps {
                    let data: Vec<f64> = scaled
                        .iter()
                        .flat_map(|r| (0..*channels).map(move |c| r[c * steps + t]))
                        .collect();
                    inputs.push(g.input(&[b, *channels], data)?);
                }
                gru.run(g, &inputs, None)?
            }
            (Body::Text { embedding, blocks, gru }, Arch::Text { max_len, .. }, Features::Tokens { seqs, .. }) => {
                let batch: Vec<Vec<u32>> = rows.iter().map(|i| clip_stream(&seqs[*i], *max_len)).collect();
                let (states, len, _) = text_states(g, embedding, blocks, &batch)?;
                let mut inputs = Vec::with_capacity(len);
                let mut step_mask = Vec::with_capacity(len);
                for t in 0..len {
                    let idx: Vec<usize> = (0..b).map(|r| r * len + t).collect();
                    inputs.push(g.gather_rows(states, &idx)?);
                    step_mask.push(batch.iter().map(|s| (t < s.len()) as u8 as f64).collect());
                }
                gru.run(g, &inputs, Some(&step_mask))?
            }
            _ => return Err(shape_error(&self.arch, x)),
        };
        let h = self.norm.forward(g, h, train)?;
        Ok(self.dropout.forward(g, h, train)?)
    }
}

fn latent_of(arch: &Arch) -> usize {
    match arch {
        Arch::Mlp { hidden, .. } | Arch::Gru { hidden, .. } | Arch::Text { hidden, .. } => *hidden,
    }
}

/// Encoder plus a single-logit output layer.
#[derive(Clone, Debug)]
pub struct Net {
    pub spec: NetSpec,
    pub encoder: Encoder,
    pub head: Dense,
}

impl Module for Net {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor, ParamRef)) {
        self.encoder.visit(&join(prefix, "encoder"), f);
        self.head.visit(&join(prefix, "head"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor, ParamRef)) {
        self.encoder.visit_mut(&join(prefix, "encoder"), f);
        self.head.visit_mut(&join(prefix, "head"), f);
    }
}

impl Net {
    /// Freshly initialised network for `spec`.
    pub fn from_spec(spec: NetSpec, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = Encoder::new(spec.arch.clone(), spec.scaler.clone(), spec.dropout, &mut rng)?;
        let head = Dense::new(encoder.latent_dim(), 1, &mut rng);
        Ok(Self { spec, encoder, head })
    }

    pub fn forward_logits(&self, g: &mut Graph, x: &Features, rows: &[usize], train: bool) -> Result<Var> {
        let h = self.encoder.forward(g, x, rows, train)?;
        Ok(self.head.forward(g, h)?)
    }

    /// Eval-mode probabilities; rows without input tokens get the prior.
    pub fn predict(&self, x: &Features) -> Result<Vec<f64>> {
        let empty = self.encoder.empty_rows(x);
        let rows: Vec<usize> = (0..x.rows()).filter(|i| !empty[*i]).collect();
        let z = predict_logits(self, &rows, &|n: &Net, g: &mut Graph, r: &[usize], t: bool| n.forward_logits(g, x, r, t))?;
        let mut out = vec![self.spec.prior; x.rows()];
        for (i, v) in rows.iter().zip(z) {
            out[*i] = sigmoid(v);
        }
        Ok(out)
    }
}

/// Builds, optionally pretrains and fits a net for `hp`.
pub fn fit_net(hp: &HyperParams, x: &Features, y: &[u8], cfg: &TrainConfig, seed: u64) -> Result<Net> {
    cfg.validate()?;
    let mismatch = || Error::Fit(format!("{} cannot take {} input", hp.kind().name(), x.shape_name()));
    let (arch, dropout, scaler) = match (*hp, x) {
        (HyperParams::Mlp { dropout, units_multiplier }, Features::Tabular { rows, cols, data }) => (
            Arch::Mlp {
                input: *cols,
                hidden: units_multiplier * cols,
            },
            dropout,
            Some(Scaler::fit(data, *rows, *cols, 1)),
        ),
        (HyperParams::GruRnn { dropout, units_multiplier }, Features::Series { rows, channels, steps, data }) => (
            Arch::Gru {
                channels: *channels,
                steps: *steps,
                hidden: units_multiplier * channels,
            },
            dropout,
            Some(Scaler::fit(data, *rows, *channels, *steps)),
        ),
        (HyperParams::TextEncoder { dropout, units_multiplier }, Features::Tokens { vocab, .. }) => {
            let t = &cfg.text;
            (
                Arch::Text {
                    vocab: *vocab,
                    dim: t.dim,
                    heads: t.heads,
                    blocks: t.blocks,
                    ff_dim: t.ff_dim,
                    max_len: t.max_len,
                    hidden: units_multiplier * t.dim,
                },
                dropout,
                None,
            )
        }
        _ => return Err(mismatch()),
    };
    let prior = y.iter().map(|v| *v as f64).sum::<f64>() / y.len() as f64;
    let spec = NetSpec {
        arch,
        dropout,
        prior,
        scaler,
    };
    let mut net = Net::from_spec(spec, seed)?;
    let empty = net.encoder.empty_rows(x);
    let rows: Vec<usize> = (0..x.rows()).filter(|i| !empty[*i]).collect();
    let pos = rows.iter().filter(|i| y[**i] == 1).count();
    if pos == 0 || pos == rows.len() {
        return Err(Error::Fit("rows with input tokens contain a single class".into()));
    }
    if let (Features::Tokens { seqs, .. }, true) = (x, cfg.text.pretrain_epochs > 0) {
        let corpus: Vec<&Vec<u32>> = rows.iter().map(|i| &seqs[*i]).collect();
        pretrain_text(&mut net.encoder, &corpus, cfg, seed)?;
    }
    train_module(&mut net, y, &rows, cfg, cfg.lr, seed, |n, g, r, t| n.forward_logits(g, x, r, t))?;
    Ok(net)
}

/// Embedding and transformer blocks with a vocabulary-sized output layer.
struct MaskedLm {
    embedding: Embedding,
    blocks: Vec<TransformerBlock>,
    out: Dense,
}

impl Module for MaskedLm {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor, ParamRef)) {
        self.embedding.visit(&join(prefix, "embedding"), f);
        self.blocks.visit(&join(prefix, "blocks"), f);
        self.out.visit(&join(prefix, "out"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor, ParamRef)) {
        self.embedding.visit_mut(&join(prefix, "embedding"), f);
        self.blocks.visit_mut(&join(prefix, "blocks"), f);
        self.out.visit_mut(&join(prefix, "out"), f);
    }
}

/// Masked-token pretraining of the embedding and transformer blocks.
/// Each masked position is scored one-vs-rest over the vocabulary.
fn pretrain_text(encoder: &mut Encoder, corpus: &[&Vec<u32>], cfg: &TrainConfig, seed: u64) -> Result<()> {
    let (Body::Text { embedding, blocks, .. }, Arch::Text { max_len, .. }) = (&mut encoder.body, &encoder.arch) else {
        return Ok(());
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6d6c_6d00);
    let vocab = embedding.vocab();
    let mut lm = MaskedLm {
        embedding: embedding.clone(),
        blocks: blocks.clone(),
        out: Dense::new(embedding.dim(), vocab, &mut rng),
    };
    let mut adam = Adam::new(AdamConfig {
        lr: cfg.lr,
        ..Default::default()
    });
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    for epoch in 0..cfg.text.pretrain_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut seqs = Vec::with_capacity(batch.len());
            let mut targets = Vec::new();
            for i in batch {
                let mut s = clip_stream(corpus[*i], *max_len);
                if s == [PAD] {
                    continue;
                }
                let mut masked: Vec<usize> =
                    (0..s.len()).filter(|_| rng.random::<f64>() < cfg.text.mask_rate).collect();
                if masked.is_empty() {
                    masked.push(rng.random_range(0..s.len()));
                }
                for p in masked {
                    targets.push((seqs.len(), p, s[p]));
                    s[p] = MASK;
                }
                seqs.push(s);
            }
            if seqs.is_empty() {
                continue;
            }
            let mut g = Graph::new(seed.wrapping_add(epoch as u64));
            let (states, len, _) = text_states(&mut g, &lm.embedding, &lm.blocks, &seqs)?;
            let idx: Vec<usize> = targets.iter().map(|(r, p, _)| r * len + p).collect();
            let picked = g.gather_rows(states, &idx)?;
            let z = lm.out.forward(&mut g, picked)?;
            let mut y = vec![0.0; targets.len() * vocab];
            for (k, (_, _, tok)) in targets.iter().enumerate() {
                y[k * vocab + *tok as usize] = 1.0;
            }
            let loss = g.bce_with_logits(z, &y)?;
            let l = g.scalar(loss);
            if !l.is_finite() {
                return Err(Error::Diverged(format!("masked-token pretraining diverged at epoch {epoch}")));
            }
            g.backward(loss)?;
            g.accumulate_grads(&mut lm)?;
            adam.step(&mut lm)?;
            total += l;
        }
        log::debug!("pretrain epoch {} loss {total:.4}", epoch + 1);
    }
    *embedding = lm.embedding;
    *blocks = lm.blocks;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::metrics::auroc;

    fn quick() -> TrainConfig {
        TrainConfig {
            max_epochs: 60,
            patience: 60,
            batch_size: 16,
            lr: 1e-2,
            val_fraction: 0.0,
            text: TextArch {
                dim: 8,
                heads: 2,
                blocks: 1,
                ff_dim: 16,
                max_len: 16,
                ..Default::default()
            },
        }
    }

    #[test]
    fn mlp_hidden_width_follows_multiplier() {
        let spec = NetSpec {
            arch: Arch::Mlp { input: 10, hidden: 10 },
            dropout: 0.2,
            prior: 0.5,
            scaler: None,
        };
        let net = Net::from_spec(spec, 0).unwrap();
        assert_eq!(net.encoder.latent_dim(), 10);
        // dense 10×10 + 10, head 10 + 1, batch-norm γ and β
        assert_eq!(net.param_count(), 110 + 11 + 20);
    }

    #[test]
    fn mlp_fits_separable_toy() {
        let n = 40;
        let data: Vec<f64> = (0..n).flat_map(|i| [i as f64, ((i * 7) % 5) as f64]).collect();
        let y: Vec<u8> = (0..n).map(|i| (i >= 20) as u8).collect();
        let x = Features::Tabular { rows: n, cols: 2, data };
        let hp = HyperParams::Mlp {
            dropout: 0.2,
            units_multiplier: 2,
        };
        let net = fit_net(&hp, &x, &y, &quick(), 1).unwrap();
        let p = net.predict(&x).unwrap();
        assert!(auroc(&p, &y).unwrap() >= 0.99);
    }

    #[test]
    fn constant_features_give_constant_output() {
        let x = Features::Tabular {
            rows: 10,
            cols: 3,
            data: vec![2.0; 30],
        };
        let y: Vec<u8> = (0..10).map(|i| (i % 2) as u8).collect();
        let hp = HyperParams::Mlp {
            dropout: 0.3,
            units_multiplier: 1,
        };
        let p = fit_net(&hp, &x, &y, &quick(), 0).unwrap().predict(&x).unwrap();
        assert!(p.iter().all(|v| (v - p[0]).abs() < 1e-12));
    }

    #[test]
    fn gru_reads_the_last_month() {
        // one channel; class decided by the sign of the last month only
        let n = 60;
        let mut data = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let cls = (i % 2) as u8;
            for t in 0..6 {
                let noise = ((i * 31 + t * 17) % 11) as f64 / 11.0 - 0.5;
                data.push(if t == 5 { if cls == 1 { 1.0 } else { -1.0 } } else { noise });
            }
            y.push(cls);
        }
        let x = Features::Series {
            rows: n,
            channels: 1,
            steps: 6,
            data,
        };
        let hp = HyperParams::GruRnn {
            dropout: 0.2,
            units_multiplier: 3,
        };
        let net = fit_net(&hp, &x, &y, &quick(), 2).unwrap();
        assert!(auroc(&net.predict(&x).unwrap(), &y).unwrap() >= 0.95);
    }

    fn token_fixture() -> (Features, Vec<u8>) {
        let n = 40;
        let mut seqs = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let cls = (i % 2) as u8;
            let mut s: Vec<u32> = (0..5).map(|k| 4 + ((i * 3 + k * 5) % 6) as u32).collect();
            if cls == 1 {
                s[(i / 2) % 5] = 11;
            }
            seqs.push(s);
            y.push(cls);
        }
        (Features::Tokens { seqs, vocab: 12 }, y)
    }

    #[test]
    fn text_encoder_finds_the_marker_token() {
        let (x, y) = token_fixture();
        let hp = HyperParams::TextEncoder {
            dropout: 0.2,
            units_multiplier: 1,
        };
        let net = fit_net(&hp, &x, &y, &quick(), 3).unwrap();
        assert!(auroc(&net.predict(&x).unwrap(), &y).unwrap() >= 0.95);
    }

    #[test]
    fn empty_streams_get_the_prior() {
        let (x, y) = token_fixture();
        let hp = HyperParams::TextEncoder {
            dropout: 0.2,
            units_multiplier: 1,
        };
        let mut cfg = quick();
        cfg.max_epochs = 2;
        cfg.text.pretrain_epochs = 1;
        let net = fit_net(&hp, &x, &y, &cfg, 0).unwrap();
        let probe = Features::Tokens {
            seqs: vec![vec![], vec![PAD, PAD], vec![4, 5]],
            vocab: 12,
        };
        let p = net.predict(&probe).unwrap();
        assert_eq!(p[0], 0.5);
        assert_eq!(p[1], 0.5);
        assert!(p[2].is_finite());
    }

    #[test]
    fn eval_mode_is_deterministic() {
        let (x, y) = token_fixture();
        let hp = HyperParams::TextEncoder {
            dropout: 0.3,
            units_multiplier: 1,
        };
        let mut cfg = quick();
        cfg.max_epochs = 3;
        let a = fit_net(&hp, &x, &y, &cfg, 9).unwrap();
        let b = fit_net(&hp, &x, &y, &cfg, 9).unwrap();
        assert_eq!(a.predict(&x).unwrap(), b.predict(&x).unwrap());
        assert_eq!(a.checksum(), b.checksum());
    }

    #[test]
    fn wrong_input_shape_is_rejected() {
        let (x, y) = token_fixture();
        let hp = HyperParams::Mlp {
            dropout: 0.2,
            units_multiplier: 1,
        };
        assert!(matches!(fit_net(&hp, &x, &y, &quick(), 0), Err(Error::Fit(_))));
    }
}
