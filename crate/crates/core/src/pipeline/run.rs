//! Run directories and the five commands operating on them.
//!
//! A run directory holds the resolved `config.toml`, the cohort file, the
//! encoded dataset, a manifest with split indices and schema hash, and
//! every model and table derived from them.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::RunConfig;
use super::stages::{
    predict_intermediate, train_stages, Inputs, Selection, TrainedStages, UnimodalWinner, CENSORED_NAME,
    INTERMEDIATE_NAME,
};
use super::tables::{markdown, read_table, score, write_long, write_wide};
use crate::error::{Error, Result};
use crate::eval::bootstrap::resample_indices;
use crate::eval::metrics::{auprc, MetricReport};
use crate::eval::split::{complement, stratified_kfold, stratified_split, SplitMode};
use crate::eval::stats::{cd_diagram_data, critical_difference, friedman_test, nemenyi_posthoc, RankMatrix};
use crate::explain::faithfulness::even_grid;
use crate::explain::{
    explain_sample, modality_relevance, perturbation_curve, player_modalities, ExplainConfig, Granularity,
    SampleExplanation, Strategy,
};
use crate::fusion::{IntermediateModel, LateEnsemble};
use crate::models::{Modality, TrainedModel};
use crate::plot;
use crate::preprocess::{Censor, EncodedDataset, MultimodalSample, Vocabularies};
use crate::synthgen::{generate_cohort, read_jsonl, write_jsonl, RawPatient};

pub const MANIFEST_FORMAT: &str = "metafuse-run/1";

/// File names inside a run directory.
pub mod files {
    pub const CONFIG: &str = "config.toml";
    pub const COHORT: &str = "cohort.jsonl";
    pub const DATASET: &str = "dataset.json";
    pub const MANIFEST: &str = "manifest.json";
    pub const SELECTION: &str = "selection.csv";
    pub const MODELS: &str = "models";
    pub const PREDICTIONS: &str = "predictions.csv";
    pub const RESULTS: &str = "results.csv";
    pub const RESULTS_LONG: &str = "results_long.csv";
    pub const RANKSTATS: &str = "rankstats.csv";
    pub const NEMENYI: &str = "nemenyi.csv";
    pub const CD_SVG: &str = "cd.svg";
    pub const ATTRIBUTIONS: &str = "attributions.csv";
    pub const RELEVANCE: &str = "relevance.csv";
    pub const RELEVANCE_SVG: &str = "relevance.svg";
    pub const PERTURBATION: &str = "perturbation.csv";
    pub const PERTURBATION_SVG: &str = "perturbation.svg";
    pub const FAITHFULNESS: &str = "faithfulness.csv";
    pub const CENSORING: &str = "censoring.csv";
    pub const REPORT: &str = "report.md";
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub cohort: String,
    pub cohort_sha256: String,
    pub schema_hash: String,
    pub mode: SplitMode,
    pub folds: Vec<FoldPlan>,
}

/// Per-fold stage summary stored next to the models.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct StagesFile {
    unimodal: Vec<(Modality, f64)>,
    early: bool,
    late: Option<Vec<f64>>,
    intermediate: bool,
}

fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(std::fs::read(path)?)))
}

fn need(path: &Path, what: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::Config(format!("{} not found ({what})", path.display())))
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text)?;
    Ok(())
}

pub fn load_cohort(cfg: &RunConfig) -> Result<Vec<RawPatient>> {
    match &cfg.cohort.file {
        Some(f) => {
            let file = File::open(f).map_err(|e| Error::Config(format!("cannot open cohort {}: {e}", f.display())))?;
            read_jsonl(BufReader::new(file))
        }
        None => generate_cohort(&cfg.cohort.generator),
    }
}

/// Writes the cohort interchange file; returns the number of patients.
pub fn cmd_generate(cfg: &RunConfig, out: &Path) -> Result<usize> {
    let patients = generate_cohort(&cfg.cohort.generator)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    write_jsonl(&patients, BufWriter::new(File::create(out)?))?;
    info!("wrote {} patients to {}", patients.len(), out.display());
    Ok(patients.len())
}

fn labels_of(patients: &[RawPatient]) -> Vec<u8> {
    patients.iter().map(|p| p.label.as_f64() as u8).collect()
}

fn fold_dir(dir: &Path, k: usize) -> PathBuf {
    dir.join(files::MODELS).join(format!("fold{k}"))
}

fn fold_seed(seed: u64, k: usize) -> u64 {
    seed.wrapping_add(1000 * k as u64)
}

impl TrainedStages {
    pub fn save(&self, dir: &Path, schema_hash: &str, seed: u64) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for u in &self.unimodal {
            u.model.save(&dir.join(u.modality.name().to_lowercase()), schema_hash)?;
        }
        if let Some(m) = &self.early {
            m.save(&dir.join("early"), schema_hash)?;
        }
        if let Some(m) = &self.intermediate {
            m.save(&dir.join("intermediate"), seed, schema_hash)?;
        }
        let meta = StagesFile {
            unimodal: self.unimodal.iter().map(|u| (u.modality, u.mean_val_auprc)).collect(),
            early: self.early.is_some(),
            late: self.late.as_ref().map(|l| l.weights.clone()),
            intermediate: self.intermediate.is_some(),
        };
        write_text(&dir.join("stages.json"), &serde_json::to_string_pretty(&meta)?)
    }

    /// Loads a fold's models, listing every absent stage in the error.
    pub fn load(dir: &Path, schema_hash: &str) -> Result<Self> {
        let meta_path = dir.join("stages.json");
        need(&meta_path, "run `train` first")?;
        let meta: StagesFile = serde_json::from_slice(&std::fs::read(&meta_path)?)?;
        let mut missing = Vec::new();
        let mut stems: Vec<(String, PathBuf)> = meta
            .unimodal
            .iter()
            .map(|(m, _)| (m.name().to_string(), dir.join(m.name().to_lowercase())))
            .collect();
        if meta.early {
            stems.push(("early fusion".into(), dir.join("early")));
        }
        if meta.intermediate {
            stems.push(("intermediate fusion".into(), dir.join("intermediate")));
        }
        for (name, stem) in &stems {
            if !stem.with_extension("json").exists() {
                missing.push(name.clone());
            }
        }
        if !missing.is_empty() {
            return Err(Error::Config(format!(
                "missing checkpoints in {}: {}; rerun `train`",
                dir.display(),
                missing.join(", ")
            )));
        }
        let check = |h: String, what: &str| -> Result<()> {
            if h == schema_hash {
                Ok(())
            } else {
                Err(Error::Config(format!("{what} was trained under a different dataset schema")))
            }
        };
        let mut unimodal = Vec::new();
        for (m, score) in &meta.unimodal {
            let (model, h) = TrainedModel::load(&dir.join(m.name().to_lowercase()))?;
            check(h, m.name())?;
            unimodal.push(UnimodalWinner {
                modality: *m,
                model,
                mean_val_auprc: *score,
            });
        }
        let early = if meta.early {
            let (model, h) = TrainedModel::load(&dir.join("early"))?;
            check(h, "early fusion")?;
            Some(model)
        } else {
            None
        };
        let late = meta.late.map(|weights| LateEnsemble {
            members: unimodal.iter().map(|u| u.model.clone()).collect(),
            weights,
        });
        let intermediate = if meta.intermediate {
            let (model, h) = IntermediateModel::load(&dir.join("intermediate"))?;
            check(h, "intermediate fusion")?;
            Some(model)
        } else {
            None
        };
        Ok(Self {
            selections: Vec::new(),
            unimodal,
            early,
            late,
            intermediate,
        })
    }
}

fn write_selection(path: &Path, per_fold: &[Vec<Selection>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["fold", "modality", "model", "params", "fold_auprc", "mean_auprc", "winner", "encoder"])?;
    for (k, sels) in per_fold.iter().enumerate() {
        for s in sels {
            for (i, g) in s.scores.iter().enumerate() {
                let folds: Vec<String> = g.fold_auprc.iter().map(|v| v.to_string()).collect();
                w.write_record([
                    &k.to_string(),
                    s.modality.name(),
                    g.hp.kind().name(),
                    &g.hp.label(),
                    &folds.join(";"),
                    &g.mean_auprc.to_string(),
                    &(i == s.winner).to_string(),
                    &(Some(i) == s.best_deep).to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Everything loaded from a run directory.
pub struct Run {
    pub dir: PathBuf,
    pub config: RunConfig,
    pub manifest: Manifest,
    pub dataset: EncodedDataset,
}

impl Run {
    pub fn open(dir: &Path) -> Result<Self> {
        let cfg_path = dir.join(files::CONFIG);
        need(&cfg_path, "not a run directory; run `train` first")?;
        let config = RunConfig::load(&cfg_path)?;
        let man_path = dir.join(files::MANIFEST);
        need(&man_path, "run `train` first")?;
        let manifest: Manifest = serde_json::from_slice(&std::fs::read(&man_path)?)?;
        if manifest.format != MANIFEST_FORMAT {
            return Err(Error::Config(format!("unsupported run format `{}`", manifest.format)));
        }
        let ds_path = dir.join(files::DATASET);
        need(&ds_path, "run `train` first")?;
        let dataset = EncodedDataset::load(&ds_path)?;
        if dataset.schema_hash != manifest.schema_hash {
            return Err(Error::Config("dataset schema does not match the manifest".into()));
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            config,
            manifest,
            dataset,
        })
    }

    pub fn inputs(&self, samples: &[MultimodalSample]) -> Result<Inputs> {
        Inputs::build(samples, self.dataset.schema.tokenizer.vocab_size(), &self.config.extract)
    }

    pub fn stages(&self, fold: usize) -> Result<TrainedStages> {
        TrainedStages::load(&fold_dir(&self.dir, fold), &self.manifest.schema_hash)
    }

    pub fn raw_cohort(&self) -> Result<Vec<RawPatient>> {
        let p = self.dir.join(files::COHORT);
        need(&p, "cohort copy missing from the run directory")?;
        read_jsonl(BufReader::new(File::open(p)?))
    }
}

/// Splits, encodes, runs the three training stages per fold and saves the
/// winners. `dir` receives the resolved configuration first so a failed
/// run is still self-describing.
pub fn cmd_train(cfg: &RunConfig, dir: &Path) -> Result<Manifest> {
    std::fs::create_dir_all(dir)?;
    write_text(&dir.join(files::CONFIG), &cfg.to_toml()?)?;
    let raw = load_cohort(cfg)?;
    if raw.is_empty() {
        return Err(Error::Config("the cohort is empty".into()));
    }
    let cohort_path = dir.join(files::COHORT);
    write_jsonl(&raw, BufWriter::new(File::create(&cohort_path)?))?;
    let y = labels_of(&raw);
    let plan = &cfg.split;
    let folds: Vec<FoldPlan> = match plan.mode {
        SplitMode::Tripod2a => {
            let (train, test) = stratified_split(&y, plan.dev_fraction, plan.seed)?;
            vec![FoldPlan { train, test }]
        }
        SplitMode::Nested => stratified_kfold(&y, plan.outer_folds, plan.seed)?
            .into_iter()
            .map(|test| FoldPlan {
                train: complement(y.len(), &test),
                test,
            })
            .collect(),
    };
    // nested runs share one vocabulary fitted on every patient; labels
    // never enter it
    let vocab_rows: Vec<RawPatient> = match plan.mode {
        SplitMode::Tripod2a => folds[0].train.iter().map(|i| raw[*i].clone()).collect(),
        SplitMode::Nested => raw.clone(),
    };
    let vocab = Vocabularies::fit(&vocab_rows, cfg.preprocess.clone())?;
    let samples = raw.iter().map(|p| vocab.encode(p)).collect::<Result<Vec<_>>>()?;
    let dataset = EncodedDataset::new(vocab, samples);
    dataset.save(&dir.join(files::DATASET))?;
    let inputs = Inputs::build(&dataset.samples, dataset.schema.tokenizer.vocab_size(), &cfg.extract)?;
    let stage_cfg = cfg.stage_config();
    let grids = |m: Modality| cfg.grid.grid(m);
    let mut selections = Vec::new();
    for (k, f) in folds.iter().enumerate() {
        info!("fold {k}: {} train / {} test", f.train.len(), f.test.len());
        let seed = fold_seed(cfg.seed, k);
        let stages = train_stages(&inputs, &y, &f.train, &stage_cfg, &grids, seed)?;
        stages.save(&fold_dir(dir, k), &dataset.schema_hash, seed)?;
        selections.push(stages.selections);
    }
    write_selection(&dir.join(files::SELECTION), &selections)?;
    let manifest = Manifest {
        format: MANIFEST_FORMAT.into(),
        cohort: cfg.cohort_name(),
        cohort_sha256: sha256_file(&cohort_path)?,
        schema_hash: dataset.schema_hash.clone(),
        mode: plan.mode,
        folds,
    };
    write_text(&dir.join(files::MANIFEST), &serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

/// Pooled test predictions of every entry over all folds.
pub struct Pooled {
    pub names: Vec<String>,
    pub patient_ids: Vec<String>,
    pub folds: Vec<usize>,
    pub labels: Vec<u8>,
    /// Aligned with `names`.
    pub probs: Vec<Vec<f64>>,
}

pub fn pooled_predictions(run: &Run) -> Result<Pooled> {
    let y = run.dataset.labels();
    let mut pooled = Pooled {
        names: Vec::new(),
        patient_ids: Vec::new(),
        folds: Vec::new(),
        labels: Vec::new(),
        probs: Vec::new(),
    };
    for (k, f) in run.manifest.folds.iter().enumerate() {
        let stages = run.stages(k)?;
        let inputs = run.inputs(&run.dataset.subset(&f.test))?;
        let preds = stages.predict(&inputs)?;
        if k == 0 {
            pooled.names = preds.iter().map(|(n, _)| n.clone()).collect();
            pooled.probs = vec![Vec::new(); preds.len()];
        } else if preds.iter().map(|(n, _)| n).ne(pooled.names.iter()) {
            return Err(Error::Config(format!("fold {k} trained a different set of models")));
        }
        for (acc, (_, p)) in pooled.probs.iter_mut().zip(preds) {
            acc.extend(p);
        }
        pooled.patient_ids.extend(f.test.iter().map(|i| run.dataset.samples[*i].patient_id.clone()));
        pooled.folds.extend(std::iter::repeat_n(k, f.test.len()));
        pooled.labels.extend(f.test.iter().map(|i| y[*i]));
    }
    Ok(pooled)
}

/// Rank statistics over bootstrap replicates of the pooled predictions,
/// each replicate one block scored by AUPRC.
pub struct RankStats {
    pub names: Vec<String>,
    pub mean_ranks: Vec<f64>,
    pub chi2: f64,
    pub p_value: f64,
    pub df: usize,
    pub cd: f64,
    pub n_blocks: usize,
    pub nemenyi: Vec<Vec<f64>>,
}

pub fn rank_statistics(p: &Pooled, replicates: usize, alpha: f64, seed: u64) -> Result<RankStats> {
    let (draws, _) = resample_indices(&p.labels, replicates, seed)?;
    let mut blocks = Vec::with_capacity(draws.len());
    for idx in &draws {
        let y: Vec<u8> = idx.iter().map(|i| p.labels[*i]).collect();
        let row = p
            .probs
            .iter()
            .map(|probs| {
                let s: Vec<f64> = idx.iter().map(|i| probs[*i]).collect();
                auprc(&s, &y)
            })
            .collect::<Result<Vec<_>>>()?;
        blocks.push(row);
    }
    let r = RankMatrix::new(blocks)?;
    let f = friedman_test(&r)?;
    Ok(RankStats {
        names: p.names.clone(),
        mean_ranks: r.mean_ranks(),
        chi2: f.chi2,
        p_value: f.p_value,
        df: f.df,
        cd: critical_difference(r.k, r.n_blocks, alpha)?,
        n_blocks: r.n_blocks,
        nemenyi: nemenyi_posthoc(&r),
    })
}

/// Holdout (or pooled outer-fold) metrics, rank statistics and the CD
/// diagram. Returns the result rows.
pub fn cmd_evaluate(dir: &Path) -> Result<Vec<(String, MetricReport)>> {
    let run = Run::open(dir)?;
    let cfg = &run.config;
    let p = pooled_predictions(&run)?;

    let mut w = csv::Writer::from_path(dir.join(files::PREDICTIONS))?;
    let mut header = vec!["fold".to_string(), "patient_id".into(), "label".into()];
    header.extend(p.names.iter().cloned());
    w.write_record(&header)?;
    for i in 0..p.labels.len() {
        let mut rec = vec![p.folds[i].to_string(), p.patient_ids[i].clone(), p.labels[i].to_string()];
        rec.extend(p.probs.iter().map(|v| v[i].to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;

    let ci = match run.manifest.mode {
        SplitMode::Nested => Some((cfg.bootstrap.replicates, cfg.bootstrap.alpha, cfg.seed)),
        SplitMode::Tripod2a => None,
    };
    let rows = p
        .names
        .iter()
        .zip(&p.probs)
        .map(|(n, probs)| Ok((n.clone(), score(probs, &p.labels, ci)?)))
        .collect::<Result<Vec<_>>>()?;
    write_wide(&dir.join(files::RESULTS), &rows)?;
    write_long(&dir.join(files::RESULTS_LONG), &run.manifest.cohort, &rows)?;

    if p.names.len() >= 3 {
        let rs = rank_statistics(&p, cfg.bootstrap.replicates, cfg.bootstrap.alpha, cfg.seed)?;
        let mut w = csv::Writer::from_path(dir.join(files::RANKSTATS))?;
        w.write_record(["model", "mean_rank", "chi2", "df", "p_value", "critical_difference", "blocks"])?;
        for (n, r) in rs.names.iter().zip(&rs.mean_ranks) {
            w.write_record([
                n.as_str(),
                &r.to_string(),
                &rs.chi2.to_string(),
                &rs.df.to_string(),
                &rs.p_value.to_string(),
                &rs.cd.to_string(),
                &rs.n_blocks.to_string(),
            ])?;
        }
        w.flush()?;
        let mut w = csv::Writer::from_path(dir.join(files::NEMENYI))?;
        let mut header = vec![String::new()];
        header.extend(rs.names.iter().cloned());
        w.write_record(&header)?;
        for (n, row) in rs.names.iter().zip(&rs.nemenyi) {
            let mut rec = vec![n.clone()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        let d = cd_diagram_data(&rs.names, &rs.mean_ranks, rs.cd);
        write_text(
            &dir.join(files::CD_SVG),
            &plot::cd_diagram(&format!("{} (AUPRC ranks)", run.manifest.cohort), &d),
        )?;
    } else {
        warn!("fewer than three models; skipping rank statistics");
    }
    Ok(rows)
}

fn strategy_title(s: Strategy) -> &'static str {
    match s {
        Strategy::HighToLow => "High to Low",
        Strategy::LowToHigh => "Low to High",
        Strategy::Random => "Random",
    }
}

/// Summary of the explain command.
pub struct ExplainSummary {
    pub explanations: Vec<SampleExplanation>,
    pub global_relevance: [f64; 4],
    pub censoring: Vec<(String, MetricReport)>,
}

/// Attributions of the intermediate-fusion model on the first test
/// patients, modality relevance, perturbation curves and the censored
/// re-test.
pub fn cmd_explain(dir: &Path) -> Result<ExplainSummary> {
    let run = Run::open(dir)?;
    let cfg = &run.config;
    let opts = &cfg.explain;
    let stages = run.stages(0)?;
    let model = stages
        .intermediate
        .as_ref()
        .ok_or_else(|| Error::Config("explain needs the intermediate-fusion stage; enable fusion.intermediate".into()))?;
    let predict = |xs: &[MultimodalSample]| -> Result<Vec<f64>> { predict_intermediate(model, &run.inputs(xs)?) };
    let test = &run.manifest.folds[0].test;
    let chosen: Vec<MultimodalSample> = run.dataset.subset(&test[..opts.patients.min(test.len())]);
    let mut explanations = Vec::with_capacity(chosen.len());
    for (i, s) in chosen.iter().enumerate() {
        let ecfg = ExplainConfig {
            granularity: opts.granularity,
            coalitions: opts.coalitions,
            imputation: opts.imputation.clone(),
            seed: cfg.seed.wrapping_add(i as u64),
        };
        explanations.push(explain_sample(s, &predict, &ecfg)?);
        info!("explained {} ({}/{})", s.patient_id, i + 1, chosen.len());
    }

    let mut w = csv::Writer::from_path(dir.join(files::ATTRIBUTIONS))?;
    w.write_record(["patient_id", "player", "modality", "channel", "index", "phi"])?;
    for e in &explanations {
        let mods = player_modalities(e);
        for (j, phi) in e.attribution.phi.iter().enumerate() {
            let (channel, index) = match e.granularity {
                Granularity::Feature => (e.features[j].channel.to_string(), e.features[j].index.to_string()),
                Granularity::Modality => (String::new(), String::new()),
            };
            w.write_record([
                e.patient_id.as_str(),
                &j.to_string(),
                mods[j].name(),
                &channel,
                &index,
                &phi.to_string(),
            ])?;
        }
    }
    w.flush()?;

    let names: Vec<&str> = Modality::UNIMODAL.iter().map(|m| m.name()).collect();
    let relevance = if explanations.is_empty() {
        None
    } else {
        Some(modality_relevance(&explanations)?)
    };
    if let Some(rel) = &relevance {
        let mut w = csv::Writer::from_path(dir.join(files::RELEVANCE))?;
        let mut header = vec!["patient_id"];
        header.extend(&names);
        w.write_record(&header)?;
        for (id, s) in rel.patients.iter().chain(std::iter::once(&("global".to_string(), rel.global))) {
            let mut rec = vec![id.clone()];
            rec.extend(s.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        write_text(
            &dir.join(files::RELEVANCE_SVG),
            &plot::bar_chart("Global modality relevance (IF)", "share of |SHAP|", &names, &rel.global),
        )?;

        let grid = even_grid(opts.perturbation_steps);
        let curves = Strategy::ALL
            .iter()
            .map(|s| perturbation_curve(&predict, &chosen, &explanations, *s, &grid, &opts.imputation, cfg.seed))
            .collect::<Result<Vec<_>>>()?;
        let mut w = csv::Writer::from_path(dir.join(files::PERTURBATION))?;
        w.write_record(["strategy", "fraction", "mean_output"])?;
        for c in &curves {
            for (x, y) in c.x.iter().zip(&c.y) {
                w.write_record([c.strategy.name(), &x.to_string(), &y.to_string()])?;
            }
        }
        w.flush()?;
        let mut w = csv::Writer::from_path(dir.join(files::FAITHFULNESS))?;
        w.write_record(["strategy", "drop_area", "crossing_0.5"])?;
        for c in &curves {
            let cross = c.crossing(0.5).map_or(String::new(), |v| v.to_string());
            w.write_record([c.strategy.name(), &c.drop_area().to_string(), &cross])?;
        }
        w.flush()?;
        let series: Vec<plot::Series> = curves
            .iter()
            .map(|c| plot::Series {
                name: strategy_title(c.strategy),
                x: &c.x,
                y: &c.y,
            })
            .collect();
        write_text(
            &dir.join(files::PERTURBATION_SVG),
            &plot::line_plot("Perturbation faithfulness (IF)", "fraction of features masked", "mean model output", &series, Some(0.5)),
        )?;
    }

    let censoring = censored_retest(&run)?;
    write_wide(&dir.join(files::CENSORING), &censoring)?;
    Ok(ExplainSummary {
        explanations,
        global_relevance: relevance.map_or([0.25; 4], |r| r.global),
        censoring,
    })
}

/// Test metrics of IF and of the text model before and after removing the
/// sentences matching the censor pattern.
pub fn censored_retest(run: &Run) -> Result<Vec<(String, MetricReport)>> {
    let censor = Censor::new(&run.config.explain.censor_pattern)
        .map_err(|e| Error::Config(format!("censor pattern: {e}")))?;
    let raw = run.raw_cohort()?;
    let y = run.dataset.labels();
    let mut names: Vec<String> = Vec::new();
    let mut probs: Vec<Vec<f64>> = Vec::new();
    let mut labels = Vec::new();
    for (k, f) in run.manifest.folds.iter().enumerate() {
        let stages = run.stages(k)?;
        let clean = run.inputs(&run.dataset.subset(&f.test))?;
        let censored_samples = f
            .test
            .iter()
            .map(|i| run.dataset.schema.encode_with(&raw[*i], Some(&censor)))
            .collect::<Result<Vec<_>>>()?;
        let censored = run.inputs(&censored_samples)?;
        let mut row: Vec<(String, Vec<f64>)> = Vec::new();
        if let Some(m) = &stages.intermediate {
            row.push((INTERMEDIATE_NAME.into(), predict_intermediate(m, &clean)?));
            row.push((CENSORED_NAME.into(), predict_intermediate(m, &censored)?));
        }
        if let Some(u) = stages.unimodal.iter().find(|u| u.modality == Modality::Text) {
            row.push(("Text".into(), u.model.predict_proba(&clean.text)?));
            row.push(("Text (censored)".into(), u.model.predict_proba(&censored.text)?));
        }
        if k == 0 {
            names = row.iter().map(|(n, _)| n.clone()).collect();
            probs = vec![Vec::new(); row.len()];
        }
        for (acc, (_, p)) in probs.iter_mut().zip(row) {
            acc.extend(p);
        }
        labels.extend(f.test.iter().map(|i| y[*i]));
    }
    if names.is_empty() {
        return Err(Error::Config("censoring needs the intermediate-fusion or text stage".into()));
    }
    names
        .into_iter()
        .zip(&probs)
        .map(|(n, p)| Ok((n, score(p, &labels, None)?)))
        .collect()
}

/// Collects the tables of a run into `report.md`.
pub fn cmd_report(dir: &Path) -> Result<PathBuf> {
    let run = Run::open(dir)?;
    let results = dir.join(files::RESULTS);
    need(&results, "run `evaluate` first")?;
    let mut md = format!(
        "# Run report: {}\n\nMode: {:?}, folds: {}, schema {}, cohort sha256 {}\n\n",
        run.manifest.cohort,
        run.manifest.mode,
        run.manifest.folds.len(),
        &run.manifest.schema_hash[..12],
        &run.manifest.cohort_sha256[..12]
    );
    let sections = [
        ("Test performance", files::RESULTS),
        ("Censoring re-test", files::CENSORING),
        ("Rank statistics (AUPRC over bootstrap blocks)", files::RANKSTATS),
        ("Modality relevance", files::RELEVANCE),
        ("Perturbation faithfulness", files::FAITHFULNESS),
    ];
    for (title, name) in sections {
        let p = dir.join(name);
        if p.exists() {
            let (h, rows) = read_table(&p)?;
            md.push_str(&format!("## {title}\n\n{}\n", markdown(&h, &rows)));
        }
    }
    for (title, name) in [
        ("Critical difference diagram", files::CD_SVG),
        ("Modality relevance chart", files::RELEVANCE_SVG),
        ("Perturbation curves", files::PERTURBATION_SVG),
    ] {
        if dir.join(name).exists() {
            md.push_str(&format!("![{title}]({name})\n\n"));
        }
    }
    let out = dir.join(files::REPORT);
    write_text(&out, &md)?;
    Ok(out)
}
