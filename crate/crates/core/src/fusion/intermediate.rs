//! Intermediate fusion: the fitted unimodal nets lose their output layer and
//! their latents are concatenated into a new head. Training runs in two
//! stages, head only with frozen encoders and then everything at a lower
//! learning rate.

use std::path::Path;

use log::info;
use numcore::layers::{BatchNorm1d, Dense, Dropout};
use numcore::{join, Graph, Module, ParamRef, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::nets::{Encoder, Net, NetSpec};
use crate::models::train::{predict_logits, train_module, TrainConfig, TrainLog};
use crate::models::{Features, Modality};

const IF_FORMAT: &str = "metafuse-intermediate/1";

/// Stage lengths are fixed: both stages run all their epochs and keep the
/// best-validation weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IfConfig {
    pub head_units: usize,
    pub head_dropout: f64,
    pub frozen_epochs: usize,
    pub finetune_epochs: usize,
    /// Stage-1 learning rate. Higher than the unimodal default: fine-tuning
    /// at a tenth of 1e-3 stalls on cross-modal interactions.
    pub lr: f64,
    /// Stage-2 learning rate as a fraction of the stage-1 rate.
    pub finetune_lr_factor: f64,
    /// Donor modalities that must be present, in concatenation order.
    pub modalities: Vec<Modality>,
}

impl Default for IfConfig {
    fn default() -> Self {
        Self {
            head_units: 64,
            head_dropout: 0.2,
            frozen_epochs: 100,
            finetune_epochs: 100,
            lr: 3e-2,
            finetune_lr_factor: 0.1,
            modalities: Modality::UNIMODAL.to_vec(),
        }
    }
}

impl IfConfig {
    pub fn validate(&self) -> Result<()> {
        if self.head_units == 0 {
            return Err(Error::Config("head_units must be ≥ 1".into()));
        }
        if !(0.0..1.0).contains(&self.head_dropout) {
            return Err(Error::Config(format!("head_dropout {} not in [0, 1)", self.head_dropout)));
        }
        if !(self.lr > 0.0 && self.lr.is_finite() && self.finetune_lr_factor > 0.0) {
            return Err(Error::Config("lr and finetune_lr_factor must be > 0".into()));
        }
        if self.modalities.is_empty() || self.modalities.contains(&Modality::Early) {
            return Err(Error::Config("intermediate fusion takes unimodal donors only".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Frozen,
    Finetuned,
}

#[derive(Clone, Debug)]
pub struct FusionHead {
    pub hidden: Dense,
    pub norm: BatchNorm1d,
    pub dropout: Dropout,
    pub out: Dense,
}

impl Module for FusionHead {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor, ParamRef)) {
        self.hidden.visit(&join(prefix, "hidden"), f);
        self.norm.visit(&join(prefix, "norm"), f);
        self.out.visit(&join(prefix, "out"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor, ParamRef)) {
        self.hidden.visit_mut(&join(prefix, "hidden"), f);
        self.norm.visit_mut(&join(prefix, "norm"), f);
        self.out.visit_mut(&join(prefix, "out"), f);
    }
}

#[derive(Clone, Debug)]
pub struct IntermediateModel {
    pub modalities: Vec<Modality>,
    pub donor_specs: Vec<NetSpec>,
    /// Checksums of the donor nets at construction time.
    pub donor_checksums: Vec<u64>,
    pub encoders: Vec<Encoder>,
    pub head: FusionHead,
    pub stage: Stage,
    pub config: IfConfig,
}

impl Module for IntermediateModel {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor, ParamRef)) {
        self.encoders.visit(&join(prefix, "encoders"), f);
        self.head.visit(&join(prefix, "head"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor, ParamRef)) {
        self.encoders.visit_mut(&join(prefix, "encoders"), f);
        self.head.visit_mut(&join(prefix, "head"), f);
    }
}

fn new_head(input: usize, cfg: &IfConfig, seed: u64) -> Result<FusionHead> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(FusionHead {
        hidden: Dense::new(input, cfg.head_units, &mut rng),
        norm: BatchNorm1d::new(cfg.head_units),
        dropout: Dropout::new(cfg.head_dropout)?,
        out: Dense::new(cfg.head_units, 1, &mut rng),
    })
}

/// Reuses the fitted encoders of `donors`, one per configured modality,
/// under a freshly initialised head.
pub fn build_intermediate(donors: &[(Modality, &Net)], cfg: &IfConfig, seed: u64) -> Result<IntermediateModel> {
    cfg.validate()?;
    let mut encoders = Vec::new();
    let mut specs = Vec::new();
    let mut sums = Vec::new();
    for m in &cfg.modalities {
        let Some((_, net)) = donors.iter().find(|(d, _)| d == m) else {
            return Err(Error::Config(format!("intermediate fusion is missing a {} model", m.name())));
        };
        encoders.push(net.encoder.clone());
        specs.push(net.spec.clone());
        sums.push(net.checksum());
    }
    let input = encoders.iter().map(Encoder::latent_dim).sum();
    Ok(IntermediateModel {
        modalities: cfg.modalities.clone(),
        donor_specs: specs,
        donor_checksums: sums,
        encoders,
        head: new_head(input, cfg, seed)?,
        stage: Stage::Frozen,
        config: cfg.clone(),
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct IfFile {
    format: String,
    modalities: Vec<Modality>,
    donor_specs: Vec<NetSpec>,
    donor_checksums: Vec<u64>,
    stage: Stage,
    config: IfConfig,
    seed: u64,
    schema_hash: String,
}

impl IntermediateModel {
    pub fn head_input_dim(&self) -> usize {
        self.encoders.iter().map(Encoder::latent_dim).sum()
    }

    pub fn encoder_checksum(&self) -> u64 {
        self.encoders.checksum()
    }

    fn check_inputs(&self, inputs: &[&Features]) -> Result<usize> {
        if inputs.len() != self.encoders.len() {
            return Err(Error::Inference(format!(
                "intermediate model expects {} modalities, got {}",
                self.encoders.len(),
                inputs.len()
            )));
        }
        let n = inputs[0].rows();
        if inputs.iter().any(|x| x.rows() != n) {
            return Err(Error::Inference("modalities have different row counts".into()));
        }
        Ok(n)
    }

    /// Concatenated encoder latents for `rows`. Frozen encoders always run
    /// in evaluation mode so their batch-norm statistics stay fixed.
    pub fn latents(&self, g: &mut Graph, inputs: &[&Features], rows: &[usize], train: bool) -> Result<Var> {
        let enc_train = train && self.stage == Stage::Finetuned;
        let parts = self
            .encoders
            .iter()
            .zip(inputs)
            .map(|(e, x)| e.forward(g, x, rows, enc_train))
            .collect::<Result<Vec<_>>>()?;
        Ok(g.concat_cols(&parts)?)
    }

    /// Head applied to precomputed latents `[b, head_input_dim]`.
    pub fn head_forward(&self, g: &mut Graph, z: Var, train: bool) -> Result<Var> {
        let h = self.head.hidden.forward(g, z)?;
        let h = g.relu(h);
        let h = self.head.norm.forward(g, h, train)?;
        let h = self.head.dropout.forward(g, h, train)?;
        Ok(self.head.out.forward(g, h)?)
    }

    pub fn forward_logits(&self, g: &mut Graph, inputs: &[&Features], rows: &[usize], train: bool) -> Result<Var> {
        let z = self.latents(g, inputs, rows, train)?;
        self.head_forward(g, z, train)
    }

    pub fn predict(&self, inputs: &[&Features]) -> Result<Vec<f64>> {
        let n = self.check_inputs(inputs)?;
        let rows: Vec<usize> = (0..n).collect();
        let f = |m: &IntermediateModel, g: &mut Graph, r: &[usize], t: bool| m.forward_logits(g, inputs, r, t);
        Ok(predict_logits(self, &rows, &f)?
            .into_iter()
            .map(crate::models::linear::sigmoid)
            .collect())
    }

    /// Stage 1: only the head learns.
    pub fn train_frozen(&mut self, inputs: &[&Features], y: &[u8], train: &TrainConfig, seed: u64) -> Result<TrainLog> {
        self.check_inputs(inputs)?;
        self.stage = Stage::Frozen;
        self.encoders.set_frozen(true);
        let cfg = TrainConfig {
            max_epochs: self.config.frozen_epochs.max(1),
            patience: self.config.frozen_epochs.max(1),
            ..train.clone()
        };
        let rows: Vec<usize> = (0..y.len()).collect();
        let before = self.encoder_checksum();
        let log = train_module(self, y, &rows, &cfg, self.config.lr, seed, |m, g, r, t| m.forward_logits(g, inputs, r, t))?;
        debug_assert_eq!(before, self.encoder_checksum());
        info!("intermediate stage 1: {} epochs, best {}", log.epochs, log.best_epoch);
        Ok(log)
    }

    /// Stage 2: end-to-end fine-tuning at a reduced learning rate. Pass the
/// stage-1 seed: it fixes the early-stopping split.
    pub fn finetune(&mut self, inputs: &[&Features], y: &[u8], train: &TrainConfig, seed: u64) -> Result<TrainLog> {
        self.check_inputs(inputs)?;
        self.stage = Stage::Finetuned;
        self.encoders.set_frozen(false);
        let cfg = TrainConfig {
            max_epochs: self.config.finetune_epochs.max(1),
            patience: self.config.finetune_epochs.max(1),
            ..train.clone()
        };
        let rows: Vec<usize> = (0..y.len()).collect();
        let lr = self.config.lr * self.config.finetune_lr_factor;
        // same seed as stage 1 so both stages stop early on the same rows
        let log = train_module(self, y, &rows, &cfg, lr, seed, |m, g, r, t| m.forward_logits(g, inputs, r, t))?;
        info!("intermediate stage 2: {} epochs, best {}", log.epochs, log.best_epoch);
        Ok(log)
    }

    /// Both stages; a zero-length fine-tuning stage keeps the frozen model.
    pub fn fit(&mut self, inputs: &[&Features], y: &[u8], train: &TrainConfig, seed: u64) -> Result<()> {
        self.train_frozen(inputs, y, train, seed)?;
        if self.config.finetune_epochs > 0 {
            self.finetune(inputs, y, train, seed)?;
        }
        Ok(())
    }

    pub fn save(&self, stem: &Path, seed: u64, schema_hash: &str) -> Result<()> {
        let meta = IfFile {
            format: IF_FORMAT.into(),
            modalities: self.modalities.clone(),
            donor_specs: self.donor_specs.clone(),
            donor_checksums: self.donor_checksums.clone(),
            stage: self.stage,
            config: self.config.clone(),
            seed,
            schema_hash: schema_hash.into(),
        };
        std::fs::write(stem.with_extension("json"), serde_json::to_vec_pretty(&meta)?)?;
        std::fs::write(stem.with_extension("ckpt"), numcore::checkpoint::encode(self))?;
        Ok(())
    }

    pub fn load(stem: &Path) -> Result<(Self, String)> {
        let meta: IfFile = serde_json::from_slice(&std::fs::read(stem.with_extension("json"))?)?;
        if meta.format != IF_FORMAT {
            return Err(Error::Config(format!("unsupported model format `{}`", meta.format)));
        }
        let mut encoders = Vec::new();
        for spec in &meta.donor_specs {
            encoders.push(Net::from_spec(spec.clone(), meta.seed)?.encoder);
        }
        let input = encoders.iter().map(Encoder::latent_dim).sum();
        let mut model = IntermediateModel {
            modalities: meta.modalities,
            donor_specs: meta.donor_specs,
            donor_checksums: meta.donor_checksums,
            encoders,
            head: new_head(input, &meta.config, meta.seed)?,
            stage: meta.stage,
            config: meta.config,
        };
        let entries = numcore::checkpoint::decode(&std::fs::read(stem.with_extension("ckpt"))?)?;
        let table: Vec<_> = entries.into_iter().map(|e| (e.name, e.tensor)).collect();
        model.load_named(&table)?;
        Ok((model, meta.schema_hash))
    }
}
