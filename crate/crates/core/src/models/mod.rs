//! The unimodal classifier zoo behind one fit / predict interface.

pub mod c22;
pub mod grid;
pub mod knn;
pub mod linear;
pub mod nets;
pub mod rocket;
pub mod scale;
pub mod train;
pub mod tree;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::early::{early_fuse, EarlyConfig};
use crate::preprocess::{MultimodalSample, MONTHS};

pub use grid::{default_grid, HyperGrid};
pub use nets::{Net, TextArch};
pub use train::TrainConfig;

/// Input channel a model is trained on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Static,
    Labs,
    Meds,
    Text,
    /// Early fusion: static features with time-averaged labs and meds.
    Early,
}

impl Modality {
    pub const UNIMODAL: [Modality; 4] = [Modality::Static, Modality::Labs, Modality::Meds, Modality::Text];

    pub fn name(self) -> &'static str {
        match self {
            Modality::Static => "Static",
            Modality::Labs => "Labs",
            Modality::Meds => "Meds",
            Modality::Text => "Text",
            Modality::Early => "EF (w/o text)",
        }
    }
}

/// Model input for one modality, rows aligned with samples.
#[derive(Clone, Debug, PartialEq)]
pub enum Features {
    Tabular { rows: usize, cols: usize, data: Vec<f64> },
    /// `[rows × channels × steps]`, row-major.
    Series { rows: usize, channels: usize, steps: usize, data: Vec<f64> },
    Tokens { seqs: Vec<Vec<u32>>, vocab: usize },
}

impl Features {
    pub fn rows(&self) -> usize {
        match self {
            Features::Tabular { rows, .. } | Features::Series { rows, .. } => *rows,
            Features::Tokens { seqs, .. } => seqs.len(),
        }
    }

    /// Flat numeric row (tabular row, or a series row as channel-major cells).
    pub fn row(&self, i: usize) -> &[f64] {
        match self {
            Features::Tabular { cols, data, .. } => &data[i * cols..(i + 1) * cols],
            Features::Series { channels, steps, data, .. } => {
                let w = channels * steps;
                &data[i * w..(i + 1) * w]
            }
            Features::Tokens { .. } => &[],
        }
    }

    pub fn select(&self, idx: &[usize]) -> Features {
        match self {
            Features::Tabular { cols, .. } => Features::Tabular {
                rows: idx.len(),
                cols: *cols,
                data: idx.iter().flat_map(|i| self.row(*i).iter().copied()).collect(),
            },
            Features::Series { channels, steps, .. } => Features::Series {
                rows: idx.len(),
                channels: *channels,
                steps: *steps,
                data: idx.iter().flat_map(|i| self.row(*i).iter().copied()).collect(),
            },
            Features::Tokens { seqs, vocab } => Features::Tokens {
                seqs: idx.iter().map(|i| seqs[*i].clone()).collect(),
                vocab: *vocab,
            },
        }
    }

    /// Series cells laid out as one tabular row per sample.
    pub fn flatten(&self) -> Features {
        match self {
            Features::Series { rows, channels, steps, data } => Features::Tabular {
                rows: *rows,
                cols: channels * steps,
                data: data.clone(),
            },
            other => other.clone(),
        }
    }

    pub fn shape_name(&self) -> &'static str {
        match self {
            Features::Tabular { .. } => "tabular",
            Features::Series { .. } => "series",
            Features::Tokens { .. } => "tokens",
        }
    }

    fn check_finite(&self) -> Result<()> {
        let ok = match self {
            Features::Tabular { data, .. } | Features::Series { data, .. } => data.iter().all(|v| v.is_finite()),
            Features::Tokens { .. } => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Fit("non-finite feature value".into()))
        }
    }
}

/// How samples are turned into [`Features`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractConfig {
    /// Tail length of the token stream fed to text models.
    pub text_max_len: usize,
    pub early: EarlyConfig,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        Self {
            text_max_len: 512,
            early: EarlyConfig::default(),
        }
    }
}

pub fn extract(samples: &[MultimodalSample], modality: Modality, token_vocab: usize, cfg: &ExtractConfig) -> Result<Features> {
    let rows = samples.len();
    let series = |get: fn(&MultimodalSample) -> &Vec<f64>| -> Result<Features> {
        let width = samples.first().map_or(0, |s| get(s).len());
        if width % MONTHS != 0 || samples.iter().any(|s| get(s).len() != width) {
            return Err(Error::Encoding("inconsistent series width across samples".into()));
        }
        Ok(Features::Series {
            rows,
            channels: width / MONTHS,
            steps: MONTHS,
            data: samples.iter().flat_map(|s| get(s).iter().copied()).collect(),
        })
    };
    match modality {
        Modality::Static => {
            let cols = samples.first().map_or(0, |s| s.statics.len());
            Ok(Features::Tabular {
                rows,
                cols,
                data: samples.iter().flat_map(|s| s.statics.iter().copied()).collect(),
            })
        }
        Modality::Labs => series(|s| &s.labs),
        Modality::Meds => series(|s| &s.meds),
        Modality::Text => Ok(Features::Tokens {
            seqs: samples.iter().map(|s| s.token_stream(cfg.text_max_len)).collect(),
            vocab: token_vocab,
        }),
        Modality::Early => {
            let (data, cols) = early_fuse(samples, &cfg.early)?;
            Ok(Features::Tabular { rows, cols, data })
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Knn,
    Logreg,
    Gbt,
    Rforest,
    Mlp,
    Rocket,
    C22features,
    GruRnn,
    TextEncoder,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Knn => "knn",
            ModelKind::Logreg => "logreg",
            ModelKind::Gbt => "gbt",
            ModelKind::Rforest => "rforest",
            ModelKind::Mlp => "mlp",
            ModelKind::Rocket => "rocket",
            ModelKind::C22features => "c22features",
            ModelKind::GruRnn => "gru_rnn",
            ModelKind::TextEncoder => "text_encoder",
        }
    }

    pub fn is_deep(self) -> bool {
        matches!(self, ModelKind::Mlp | ModelKind::GruRnn | ModelKind::TextEncoder)
    }

    /// Order used to break selection ties: simpler kinds first.
    pub fn simplicity(self) -> u8 {
        match self {
            ModelKind::Logreg => 0,
            ModelKind::Knn => 1,
            ModelKind::C22features => 2,
            ModelKind::Rocket => 3,
            ModelKind::Rforest => 4,
            ModelKind::Gbt => 5,
            ModelKind::Mlp => 6,
            ModelKind::GruRnn => 7,
            ModelKind::TextEncoder => 8,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Penalty {
    L1,
    L2,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum C22Estimator {
    /// Random forest, 200 trees.
    Rforest,
    /// Gradient boosting, 200 trees of depth 3.
    Gbt,
    Logreg,
}

/// One grid point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HyperParams {
    Knn { k: usize },
    Logreg { c: f64, penalty: Penalty },
    Gbt { n_estimators: usize, max_depth: usize },
    Rforest { n_estimators: usize, max_depth: usize },
    Mlp { dropout: f64, units_multiplier: usize },
    Rocket { num_kernels: usize },
    C22features { estimator: C22Estimator },
    GruRnn { dropout: f64, units_multiplier: usize },
    TextEncoder { dropout: f64, units_multiplier: usize },
}

impl HyperParams {
    pub fn kind(&self) -> ModelKind {
        match self {
            HyperParams::Knn { .. } => ModelKind::Knn,
            HyperParams::Logreg { .. } => ModelKind::Logreg,
            HyperParams::Gbt { .. } => ModelKind::Gbt,
            HyperParams::Rforest { .. } => ModelKind::Rforest,
            HyperParams::Mlp { .. } => ModelKind::Mlp,
            HyperParams::Rocket { .. } => ModelKind::Rocket,
            HyperParams::C22features { .. } => ModelKind::C22features,
            HyperParams::GruRnn { .. } => ModelKind::GruRnn,
            HyperParams::TextEncoder { .. } => ModelKind::TextEncoder,
        }
    }

    /// Compact label, e.g. `gbt(n_estimators=100,max_depth=2)`.
    pub fn label(&self) -> String {
        let inner = match self {
            HyperParams::Knn { k } => format!("k={k}"),
            HyperParams::Logreg { c, penalty } => format!("C={c},penalty={penalty:?}").to_lowercase(),
            HyperParams::Gbt { n_estimators, max_depth } | HyperParams::Rforest { n_estimators, max_depth } => {
                format!("n_estimators={n_estimators},max_depth={max_depth}")
            }
            HyperParams::Mlp { dropout, units_multiplier }
            | HyperParams::GruRnn { dropout, units_multiplier }
            | HyperParams::TextEncoder { dropout, units_multiplier } => {
                format!("dropout={dropout},units_multiplier={units_multiplier}")
            }
            HyperParams::Rocket { num_kernels } => format!("num_kernels={num_kernels}"),
            HyperParams::C22features { estimator } => format!("estimator={estimator:?}").to_lowercase(),
        };
        format!("{}({inner})", self.kind().name())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        match *self {
            HyperParams::Knn { k } if k == 0 => bad("knn: k must be ≥ 1".into()),
            HyperParams::Logreg { c, .. } if !(c > 0.0 && c.is_finite()) => bad(format!("logreg: C must be > 0, got {c}")),
            HyperParams::Gbt { n_estimators, max_depth } | HyperParams::Rforest { n_estimators, max_depth }
                if n_estimators == 0 || max_depth == 0 =>
            {
                bad(format!("{}: n_estimators and max_depth must be ≥ 1", self.kind().name()))
            }
            HyperParams::Mlp { dropout, units_multiplier }
            | HyperParams::GruRnn { dropout, units_multiplier }
            | HyperParams::TextEncoder { dropout, units_multiplier } => {
                if units_multiplier == 0 {
                    bad(format!("{}: units_multiplier must be ≥ 1", self.kind().name()))
                } else if !(0.0..1.0).contains(&dropout) {
                    bad(format!("{}: dropout {dropout} not in [0, 1)", self.kind().name()))
                } else {
                    Ok(())
                }
            }
            HyperParams::Rocket { num_kernels } if num_kernels == 0 => bad("rocket: num_kernels must be ≥ 1".into()),
            _ => Ok(()),
        }
    }
}

/// Fitted state per kind.
#[derive(Clone, Debug)]
pub enum State {
    Knn(knn::Knn),
    Logreg(linear::LogReg),
    Trees(tree::Forest),
    Rocket(rocket::Rocket),
    C22(c22::C22Model),
    Net(Box<Net>),
}

#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub hp: HyperParams,
    pub modality: Modality,
    pub seed: u64,
    pub state: State,
}

fn expect_tabular<'a>(f: &'a Features, kind: ModelKind) -> Result<(usize, usize, &'a [f64])> {
    match f {
        Features::Tabular { rows, cols, data } => Ok((*rows, *cols, data)),
        other => Err(Error::Fit(format!("{} needs tabular input, got {}", kind.name(), other.shape_name()))),
    }
}

fn expect_series<'a>(f: &'a Features, kind: ModelKind) -> Result<(usize, usize, usize, &'a [f64])> {
    match f {
        Features::Series { rows, channels, steps, data } => Ok((*rows, *channels, *steps, data)),
        other => Err(Error::Fit(format!("{} needs series input, got {}", kind.name(), other.shape_name()))),
    }
}

fn check_labels(x: &Features, y: &[u8]) -> Result<()> {
    if x.rows() != y.len() {
        return Err(Error::Fit(format!("{} rows but {} labels", x.rows(), y.len())));
    }
    if y.iter().any(|v| *v > 1) {
        return Err(Error::Fit("labels must be 0 or 1".into()));
    }
    let pos = y.iter().filter(|v| **v == 1).count();
    if pos == 0 || pos == y.len() {
        return Err(Error::Fit("training labels contain a single class".into()));
    }
    Ok(())
}

/// Fits one grid point on `(x, y)`.
pub fn fit(hp: &HyperParams, modality: Modality, x: &Features, y: &[u8], cfg: &TrainConfig, seed: u64) -> Result<TrainedModel> {
    hp.validate()?;
    check_labels(x, y)?;
    x.check_finite()?;
    let kind = hp.kind();
    let state = match *hp {
        HyperParams::Knn { k } => {
            let (n, d, data) = expect_tabular(x, kind)?;
            State::Knn(knn::Knn::fit(data, n, d, y, k)?)
        }
        HyperParams::Logreg { c, penalty } => {
            let (n, d, data) = expect_tabular(x, kind)?;
            State::Logreg(linear::LogReg::fit(data, n, d, y, c, penalty)?)
        }
        HyperParams::Gbt { n_estimators, max_depth } => {
            let (n, d, data) = expect_tabular(x, kind)?;
            State::Trees(tree::Forest::fit_gbt(data, n, d, y, n_estimators, max_depth, seed)?)
        }
        HyperParams::Rforest { n_estimators, max_depth } => {
            let (n, d, data) = expect_tabular(x, kind)?;
            State::Trees(tree::Forest::fit_rf(data, n, d, y, n_estimators, max_depth, seed)?)
        }
        HyperParams::Rocket { num_kernels } => {
            let (n, ch, t, data) = expect_series(x, kind)?;
            State::Rocket(rocket::Rocket::fit(data, n, ch, t, y, num_kernels, seed)?)
        }
        HyperParams::C22features { estimator } => {
            let (n, ch, t, data) = expect_series(x, kind)?;
            State::C22(c22::C22Model::fit(data, n, ch, t, y, estimator, seed)?)
        }
        HyperParams::Mlp { .. } | HyperParams::GruRnn { .. } | HyperParams::TextEncoder { .. } => {
            State::Net(Box::new(nets::fit_net(hp, x, y, cfg, seed)?))
        }
    };
    Ok(TrainedModel {
        hp: *hp,
        modality,
        seed,
        state,
    })
}

impl TrainedModel {
    pub fn kind(&self) -> ModelKind {
        self.hp.kind()
    }

    /// Probability of the positive class for every row of `x`.
    pub fn predict_proba(&self, x: &Features) -> Result<Vec<f64>> {
        x.check_finite().map_err(|e| Error::Inference(e.to_string()))?;
        let kind = self.kind();
        let wrong = |e: Error| Error::Inference(e.to_string());
        let p = match &self.state {
            State::Knn(m) => {
                let (n, d, data) = expect_tabular(x, kind).map_err(wrong)?;
                m.predict(data, n, d)?
            }
            State::Logreg(m) => {
                let (n, d, data) = expect_tabular(x, kind).map_err(wrong)?;
                m.predict(data, n, d)?
            }
            State::Trees(m) => {
                let (n, d, data) = expect_tabular(x, kind).map_err(wrong)?;
                m.predict(data, n, d)?
            }
            State::Rocket(m) => {
                let (n, ch, t, data) = expect_series(x, kind).map_err(wrong)?;
                m.predict(data, n, ch, t)?
            }
            State::C22(m) => {
                let (n, ch, t, data) = expect_series(x, kind).map_err(wrong)?;
                m.predict(data, n, ch, t)?
            }
            State::Net(net) => net.predict(x)?,
        };
        if p.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Inference(format!("{} produced a probability outside [0, 1]", kind.name())));
        }
        Ok(p)
    }

    pub fn as_net(&self) -> Option<&Net> {
        match &self.state {
            State::Net(n) => Some(n),
            _ => None,
        }
    }

    /// Writes `<stem>.json` (metadata and, for traditional models, the
    /// fitted state) and, for deep models, `<stem>.ckpt`.
    pub fn save(&self, stem: &Path, schema_hash: &str) -> Result<()> {
        let (state, ckpt) = match &self.state {
            State::Knn(m) => (serde_json::to_value(m)?, None),
            State::Logreg(m) => (serde_json::to_value(m)?, None),
            State::Trees(m) => (serde_json::to_value(m)?, None),
            State::Rocket(m) => (serde_json::to_value(m)?, None),
            State::C22(m) => (serde_json::to_value(m)?, None),
            State::Net(n) => (serde_json::to_value(&n.spec)?, Some(numcore::checkpoint::encode(n.as_ref()))),
        };
        let meta = ModelFile {
            format: MODEL_FORMAT.into(),
            hp: self.hp,
            modality: self.modality,
            seed: self.seed,
            schema_hash: schema_hash.into(),
            state,
        };
        std::fs::write(stem.with_extension("json"), serde_json::to_vec_pretty(&meta)?)?;
        if let Some(bytes) = ckpt {
            std::fs::write(stem.with_extension("ckpt"), bytes)?;
        }
        Ok(())
    }

    /// Inverse of [`TrainedModel::save`]; returns the model and the schema
    /// hash it was trained under.
    pub fn load(stem: &Path) -> Result<(Self, String)> {
        let meta: ModelFile = serde_json::from_slice(&std::fs::read(stem.with_extension("json"))?)?;
        if meta.format != MODEL_FORMAT {
            return Err(Error::Config(format!("unsupported model format `{}`", meta.format)));
        }
        let v = meta.state;
        let state = match meta.hp.kind() {
            ModelKind::Knn => State::Knn(serde_json::from_value(v)?),
            ModelKind::Logreg => State::Logreg(serde_json::from_value(v)?),
            ModelKind::Gbt | ModelKind::Rforest => State::Trees(serde_json::from_value(v)?),
            ModelKind::Rocket => State::Rocket(serde_json::from_value(v)?),
            ModelKind::C22features => State::C22(serde_json::from_value(v)?),
            ModelKind::Mlp | ModelKind::GruRnn | ModelKind::TextEncoder => {
                let spec = serde_json::from_value(v)?;
                let mut net = Net::from_spec(spec, meta.seed)?;
                let entries = numcore::checkpoint::decode(&std::fs::read(stem.with_extension("ckpt"))?)?;
                let table: Vec<_> = entries.into_iter().map(|e| (e.name, e.tensor)).collect();
                numcore::Module::load_named(&mut net, &table)?;
                State::Net(Box::new(net))
            }
        };
        Ok((
            Self {
                hp: meta.hp,
                modality: meta.modality,
                seed: meta.seed,
                state,
            },
            meta.schema_hash,
        ))
    }
}

const MODEL_FORMAT: &str = "metafuse-model/1";

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    hp: HyperParams,
    modality: Modality,
    seed: u64,
    schema_hash: String,
    state: serde_json::Value,
}
