//! Model selection and the three training stages: unimodal models and
//! early fusion, then late fusion, then intermediate fusion.

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::metrics::auprc;
use crate::eval::split::inner_folds;
use crate::fusion::{build_intermediate, IfConfig, IntermediateModel, LateEnsemble};
use crate::models::{extract, fit, ExtractConfig, Features, HyperParams, Modality, TrainConfig, TrainedModel};
use crate::preprocess::MultimodalSample;

/// Features of every modality for one set of samples.
#[derive(Clone, Debug)]
pub struct Inputs {
    pub statics: Features,
    pub labs: Features,
    pub meds: Features,
    pub text: Features,
    pub early: Features,
}

impl Inputs {
    pub fn build(samples: &[MultimodalSample], token_vocab: usize, cfg: &ExtractConfig) -> Result<Self> {
        Ok(Self {
            statics: extract(samples, Modality::Static, token_vocab, cfg)?,
            labs: extract(samples, Modality::Labs, token_vocab, cfg)?,
            meds: extract(samples, Modality::Meds, token_vocab, cfg)?,
            text: extract(samples, Modality::Text, token_vocab, cfg)?,
            early: extract(samples, Modality::Early, token_vocab, cfg)?,
        })
    }

    pub fn get(&self, m: Modality) -> &Features {
        match m {
            Modality::Static => &self.statics,
            Modality::Labs => &self.labs,
            Modality::Meds => &self.meds,
            Modality::Text => &self.text,
            Modality::Early => &self.early,
        }
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            statics: self.statics.select(idx),
            labs: self.labs.select(idx),
            meds: self.meds.select(idx),
            text: self.text.select(idx),
            early: self.early.select(idx),
        }
    }

    pub fn rows(&self) -> usize {
        self.statics.rows()
    }
}

/// Mean inner-validation AUPRC of one grid point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridScore {
    pub hp: HyperParams,
    pub fold_auprc: Vec<f64>,
    /// `NaN` when a fold failed to fit.
    pub mean_auprc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub modality: Modality,
    pub scores: Vec<GridScore>,
    pub winner: usize,
    /// Best deep-learning grid point, the donor for intermediate fusion.
    pub best_deep: Option<usize>,
}

/// Best finite score; ties go to the simpler kind, then the label.
fn pick(scores: &[GridScore], keep: impl Fn(&HyperParams) -> bool) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, s) in scores.iter().enumerate() {
        if !s.mean_auprc.is_finite() || !keep(&s.hp) {
            continue;
        }
        best = match best {
            None => Some(i),
            Some(b) => {
                let o = &scores[b];
                let better = s.mean_auprc > o.mean_auprc
                    || (s.mean_auprc == o.mean_auprc
                        && (s.hp.kind().simplicity(), s.hp.label()) < (o.hp.kind().simplicity(), o.hp.label()));
                Some(if better { i } else { b })
            }
        };
    }
    best
}

fn grid_seed(seed: u64, point: usize, fold: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add((point as u64) << 16)
        .wrapping_add(fold as u64)
}

/// Scores every grid point by inner stratified cross-validation over
/// `dev`. Jobs run on a pool of `jobs` threads; results do not depend on
/// the pool size.
#[allow(clippy::too_many_arguments)]
pub fn select(
    modality: Modality,
    x: &Features,
    y: &[u8],
    dev: &[usize],
    grid: &[HyperParams],
    train: &TrainConfig,
    inner_k: usize,
    seed: u64,
    jobs: usize,
) -> Result<Selection> {
    if grid.is_empty() {
        return Err(Error::Config(format!("empty grid for {}", modality.name())));
    }
    let folds = inner_folds(y, dev, inner_k, seed)?;
    let tasks: Vec<(usize, usize)> = (0..grid.len()).flat_map(|p| (0..folds.len()).map(move |f| (p, f))).collect();
    let run = |&(p, f): &(usize, usize)| -> f64 {
        let (tr, va) = &folds[f];
        let ytr: Vec<u8> = tr.iter().map(|i| y[*i]).collect();
        let yva: Vec<u8> = va.iter().map(|i| y[*i]).collect();
        let attempt = fit(&grid[p], modality, &x.select(tr), &ytr, train, grid_seed(seed, p, f))
            .and_then(|m| m.predict_proba(&x.select(va)))
            .and_then(|pr| auprc(&pr, &yva));
        match attempt {
            Ok(v) => v,
            Err(e) => {
                warn!("{} {} fold {f}: {e}", modality.name(), grid[p].label());
                f64::NAN
            }
        }
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let flat: Vec<f64> = pool.install(|| tasks.par_iter().map(run).collect());
    let scores: Vec<GridScore> = grid
        .iter()
        .enumerate()
        .map(|(p, hp)| {
            let fold_auprc = flat[p * folds.len()..(p + 1) * folds.len()].to_vec();
            let mean_auprc = fold_auprc.iter().sum::<f64>() / fold_auprc.len() as f64;
            GridScore {
                hp: *hp,
                fold_auprc,
                mean_auprc,
            }
        })
        .collect();
    let winner = pick(&scores, |_| true)
        .ok_or_else(|| Error::Fit(format!("every {} grid point failed to fit", modality.name())))?;
    let best_deep = pick(&scores, |hp| hp.kind().is_deep());
    info!(
        "{}: winner {} (AUPRC {:.3})",
        modality.name(),
        scores[winner].hp.label(),
        scores[winner].mean_auprc
    );
    Ok(Selection {
        modality,
        scores,
        winner,
        best_deep,
    })
}

/// What the stages train and how.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageConfig {
    pub modalities: Vec<Modality>,
    pub early: bool,
    pub late: bool,
    pub intermediate: bool,
    pub inner_folds: usize,
    pub train: TrainConfig,
    pub fusion: IfConfig,
    pub jobs: usize,
}

impl Default for StageConfig {
    fn default() -> Self {
        Self {
            modalities: Modality::UNIMODAL.to_vec(),
            early: true,
            late: true,
            intermediate: true,
            inner_folds: 5,
            train: TrainConfig::default(),
            fusion: IfConfig::default(),
            jobs: std::thread::available_parallelism().map_or(1, |n| n.get()),
        }
    }
}

#[derive(Clone, Debug)]
pub struct UnimodalWinner {
    pub modality: Modality,
    pub model: TrainedModel,
    pub mean_val_auprc: f64,
}

#[derive(Clone, Debug)]
pub struct TrainedStages {
    pub selections: Vec<Selection>,
    pub unimodal: Vec<UnimodalWinner>,
    pub early: Option<TrainedModel>,
    pub late: Option<LateEnsemble>,
    pub intermediate: Option<IntermediateModel>,
}

pub const EARLY_NAME: &str = "EF (w/o text)";
pub const LATE_NAME: &str = "LF";
pub const INTERMEDIATE_NAME: &str = "IF";
pub const CENSORED_NAME: &str = "IF (censored)";

/// Grid per modality; `grids(m)` supplies the search space.
pub fn train_stages(
    inputs: &Inputs,
    y: &[u8],
    dev: &[usize],
    cfg: &StageConfig,
    grids: &dyn Fn(Modality) -> Vec<HyperParams>,
    seed: u64,
) -> Result<TrainedStages> {
    let ydev: Vec<u8> = dev.iter().map(|i| y[*i]).collect();
    let mut selections = Vec::new();
    let mut unimodal = Vec::new();
    let mut donors = Vec::new();
    let mut plan: Vec<Modality> = cfg.modalities.clone();
    if cfg.early {
        plan.push(Modality::Early);
    }
    let mut early = None;
    for (k, m) in plan.iter().enumerate() {
        let x = inputs.get(*m);
        let s = seed.wrapping_add(101 * k as u64);
        let sel = select(*m, x, y, dev, &grids(*m), &cfg.train, cfg.inner_folds, s, cfg.jobs)
            .map_err(|e| stage_error(1, m.name(), e))?;
        let xdev = x.select(dev);
        let win = &sel.scores[sel.winner];
        let model =
            fit(&win.hp, *m, &xdev, &ydev, &cfg.train, s).map_err(|e| stage_error(1, m.name(), e))?;
        if *m == Modality::Early {
            early = Some(model);
        } else {
            if cfg.intermediate {
                let donor = match sel.best_deep {
                    Some(d) if d == sel.winner => model.clone(),
                    Some(d) => fit(&sel.scores[d].hp, *m, &xdev, &ydev, &cfg.train, s)
                        .map_err(|e| stage_error(3, m.name(), e))?,
                    None => {
                        return Err(stage_error(
                            3,
                            m.name(),
                            Error::Config("no deep model in the grid to act as encoder".into()),
                        ))
                    }
                };
                donors.push((*m, donor));
            }
            unimodal.push(UnimodalWinner {
                modality: *m,
                model,
                mean_val_auprc: win.mean_auprc,
            });
        }
        selections.push(sel);
    }
    let late = if cfg.late && unimodal.len() >= 2 {
        let scores: Vec<f64> = unimodal.iter().map(|u| u.mean_val_auprc).collect();
        let members = unimodal.iter().map(|u| u.model.clone()).collect();
        Some(LateEnsemble::new(members, &scores).map_err(|e| stage_error(2, LATE_NAME, e))?)
    } else {
        None
    };
    let intermediate = if cfg.intermediate {
        let nets: Vec<(Modality, &crate::models::Net)> = donors
            .iter()
            .filter_map(|(m, d)| d.as_net().map(|n| (*m, n)))
            .collect();
        let fusion = IfConfig {
            modalities: cfg.modalities.clone(),
            ..cfg.fusion.clone()
        };
        let mut model =
            build_intermediate(&nets, &fusion, seed ^ 0x1f).map_err(|e| stage_error(3, INTERMEDIATE_NAME, e))?;
        let sub = inputs.select(dev);
        let xs: Vec<&Features> = fusion.modalities.iter().map(|m| sub.get(*m)).collect();
        model
            .fit(&xs, &ydev, &cfg.train, seed ^ 0x2f)
            .map_err(|e| stage_error(3, INTERMEDIATE_NAME, e))?;
        Some(model)
    } else {
        None
    };
    Ok(TrainedStages {
        selections,
        unimodal,
        early,
        late,
        intermediate,
    })
}

fn stage_error(stage: u8, what: &str, e: Error) -> Error {
    let msg = format!("stage {stage} ({what}): {e}");
    match e {
        Error::Config(_) => Error::Config(msg),
        Error::Diverged(_) => Error::Diverged(msg),
        Error::Inference(_) => Error::Inference(msg),
        _ => Error::Fit(msg),
    }
}

impl TrainedStages {
    /// Probabilities of every trained entry on `inputs`, in report order.
    pub fn predict(&self, inputs: &Inputs) -> Result<Vec<(String, Vec<f64>)>> {
        let mut out = Vec::new();
        for u in &self.unimodal {
            out.push((u.modality.name().to_string(), u.model.predict_proba(inputs.get(u.modality))?));
        }
        if let Some(m) = &self.early {
            out.push((EARLY_NAME.to_string(), m.predict_proba(&inputs.early)?));
        }
        if let Some(l) = &self.late {
            let xs: Vec<&Features> = l.modalities().iter().map(|m| inputs.get(*m)).collect();
            out.push((LATE_NAME.to_string(), l.predict(&xs)?));
        }
        if let Some(m) = &self.intermediate {
            out.push((INTERMEDIATE_NAME.to_string(), predict_intermediate(m, inputs)?));
        }
        Ok(out)
    }
}

pub fn predict_intermediate(m: &IntermediateModel, inputs: &Inputs) -> Result<Vec<f64>> {
    let xs: Vec<&Features> = m.modalities.iter().map(|k| inputs.get(*k)).collect();
    m.predict(&xs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn score(hp: HyperParams, v: f64) -> GridScore {
        GridScore {
            hp,
            fold_auprc: vec![v],
            mean_auprc: v,
        }
    }

    #[test]
    fn ties_prefer_simpler_kinds() {
        let s = vec![
            score(
                HyperParams::Mlp {
                    dropout: 0.2,
                    units_multiplier: 1,
                },
                0.7,
            ),
            score(
                HyperParams::Gbt {
                    n_estimators: 100,
                    max_depth: 2,
                },
                0.7,
            ),
            score(HyperParams::Logreg {
                c: 1.0,
                penalty: crate::models::Penalty::L2,
            }, 0.7),
            score(HyperParams::Knn { k: 3 }, f64::NAN),
        ];
        assert_eq!(pick(&s, |_| true), Some(2));
        assert_eq!(pick(&s, |hp| hp.kind().is_deep()), Some(0));
    }

    #[test]
    fn higher_score_wins() {
        let s = vec![
            score(HyperParams::Knn { k: 1 }, 0.5),
            score(HyperParams::Knn { k: 3 }, 0.6),
        ];
        assert_eq!(pick(&s, |_| true), Some(1));
    }
}
