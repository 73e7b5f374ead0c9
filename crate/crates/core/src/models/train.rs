//! Mini-batch training with early stopping on validation AUPRC.

use log::{debug, warn};
use numcore::{Adam, AdamConfig, Graph, Module, Tensor, Var};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::linear::sigmoid;
use crate::error::{Error, Result};
use crate::eval::metrics::auprc;
use crate::eval::split::stratified_split;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Share of the training rows held out for early stopping.
    pub val_fraction: f64,
    pub text: super::nets::TextArch,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch_size: 32,
            max_epochs: 300,
            patience: 20,
            val_fraction: 0.1,
            text: super::nets::TextArch::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be > 0, got {}", self.lr)));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be ≥ 2 (batch norm)".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be ≥ 1".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config(format!("val_fraction {} not in [0, 1)", self.val_fraction)));
        }
        self.text.validate()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: usize,
    pub best_epoch: usize,
    pub best_val_auprc: Option<f64>,
    pub final_loss: f64,
}

/// Splits `rows` into (fit, val) for early stopping; without a usable
/// validation part everything is used for fitting.
pub fn early_stopping_split(labels: &[u8], rows: &[usize], fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    if fraction <= 0.0 {
        return (rows.to_vec(), Vec::new());
    }
    let local: Vec<u8> = rows.iter().map(|i| labels[*i]).collect();
    match stratified_split(&local, 1.0 - fraction, seed) {
        Ok((fit, val)) if val.iter().any(|i| local[*i] == 1) && val.iter().any(|i| local[*i] == 0) => {
            (fit.iter().map(|i| rows[*i]).collect(), val.iter().map(|i| rows[*i]).collect())
        }
        _ => (rows.to_vec(), Vec::new()),
    }
}

/// Evaluation-mode logits for `rows`, in batches.
pub fn predict_logits<M, F>(m: &M, rows: &[usize], forward: &F) -> Result<Vec<f64>>
where
    F: Fn(&M, &mut Graph, &[usize], bool) -> Result<Var>,
{
    let mut out = Vec::with_capacity(rows.len());
    for chunk in rows.chunks(256) {
        let mut g = Graph::new(0);
        let z = forward(m, &mut g, chunk, false)?;
        out.extend_from_slice(g.value(z));
    }
    Ok(out)
}

fn snapshot<M: Module>(m: &M) -> Vec<(String, Tensor)> {
    m.named_tensors()
}

/// Trains `m` on `rows` with BCE-with-logits. `forward(m, g, rows, train)`
/// must return `[rows.len(), 1]` logits. The best-validation weights are
/// restored at the end; on a non-finite loss the last good weights are
/// restored and an error returned.
pub fn train_module<M, F>(
    m: &mut M,
    labels: &[u8],
    rows: &[usize],
    cfg: &TrainConfig,
    lr: f64,
    seed: u64,
    forward: F,
) -> Result<TrainLog>
where
    M: Module,
    F: Fn(&M, &mut Graph, &[usize], bool) -> Result<Var>,
{
    cfg.validate()?;
    let (mut fit_rows, val_rows) = early_stopping_split(labels, rows, cfg.val_fraction, seed);
    let val_y: Vec<u8> = val_rows.iter().map(|i| labels[*i]).collect();
    let mut adam = Adam::new(AdamConfig {
        lr,
        ..Default::default()
    });
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7f4a_7c15);
    let mut best = snapshot(m);
    let mut log = TrainLog::default();
    let mut best_score = f64::NEG_INFINITY;
    let mut wait = 0usize;
    let mut step: u64 = 0;
    for epoch in 0..cfg.max_epochs {
        fit_rows.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for batch in fit_rows.chunks(cfg.batch_size) {
            if batch.len() < 2 {
                continue;
            }
            step += 1;
            let mut g = Graph::new(seed.wrapping_mul(0x9e37_79b9).wrapping_add(step));
            let z = forward(m, &mut g, batch, true)?;
            let y: Vec<f64> = batch.iter().map(|i| labels[*i] as f64).collect();
            let loss = g.bce_with_logits(z, &y)?;
            let l = g.scalar(loss);
            if !l.is_finite() {
                m.load_named(&best)?;
                return Err(Error::Diverged(format!(
                    "non-finite loss at epoch {epoch}; restored the last good weights"
                )));
            }
            g.backward(loss)?;
            g.accumulate_grads(m)?;
            g.apply_stat_updates(m);
            adam.step(m)?;
            epoch_loss += l;
            batches += 1;
        }
        log.epochs = epoch + 1;
        log.final_loss = epoch_loss / batches.max(1) as f64;
        if val_rows.is_empty() {
            best = snapshot(m);
            log.best_epoch = epoch + 1;
            continue;
        }
        let p: Vec<f64> = predict_logits(m, &val_rows, &forward)?.into_iter().map(sigmoid).collect();
        if p.iter().any(|v| !v.is_finite()) {
            m.load_named(&best)?;
            return Err(Error::Diverged(format!("non-finite validation output at epoch {epoch}")));
        }
        let score = auprc(&p, &val_y)?;
        if score > best_score {
            best_score = score;
            best = snapshot(m);
            log.best_epoch = epoch + 1;
            log.best_val_auprc = Some(score);
            wait = 0;
        } else {
            wait += 1;
            if wait >= cfg.patience {
                debug!("early stop at epoch {} (best {})", epoch + 1, log.best_epoch);
                break;
            }
        }
    }
    if log.epochs == 0 {
        warn!("no training batches were run");
    }
    m.load_named(&best)?;
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_keeps_both_classes() {
        let y: Vec<u8> = (0..50).map(|i| (i % 5 == 0) as u8).collect();
        let rows: Vec<usize> = (0..50).collect();
        let (fit, val) = early_stopping_split(&y, &rows, 0.1, 0);
        assert_eq!(fit.len() + val.len(), 50);
        assert!(val.iter().any(|i| y[*i] == 1));
    }

    #[test]
    fn tiny_sets_skip_validation() {
        let y = [0u8, 1, 0, 1];
        let (fit, val) = early_stopping_split(&y, &[0, 1, 2, 3], 0.1, 0);
        assert_eq!(fit.len(), 4);
        assert!(val.is_empty());
    }
}
