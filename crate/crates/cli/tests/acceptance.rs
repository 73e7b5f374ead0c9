//! Acceptance harness. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Pass criterion numbers as arguments to run a
//! subset: `cargo test --test acceptance -- 2 8`.

use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use metafuse::eval::metrics::{auprc, auroc, compute_metrics, threshold_metrics};
use metafuse::eval::split::{stratified_kfold, stratified_split};
use metafuse::eval::stats::{critical_difference, friedman_test, ptukey_inf, RankMatrix};
use metafuse::explain::faithfulness::even_grid;
use metafuse::explain::{
    deserialize, exact_shapley, explain_sample, kernel_shap, perturbation_curve, serialize, ExplainConfig, Game,
    Granularity, Imputation, SampleExplanation, Strategy,
};
use metafuse::fusion::{build_intermediate, IfConfig, IntermediateModel};
use metafuse::models::{fit, ExtractConfig, Features, HyperParams, Modality, Net, Penalty, TextArch, TrainConfig, TrainedModel};
use metafuse::pipeline::{self, predict_intermediate, train_stages, Inputs, RunConfig, StageConfig};
use metafuse::preprocess::{Censor, MultimodalSample, PreprocessConfig, Vocabularies, MONTHS};
use metafuse::synthgen::{generate_cohort, GeneratorConfig, RawPatient, SignalPlan, XorPlan};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = std::result::Result<String, String>;

struct Criterion {
    id: u32,
    name: &'static str,
    budget: Duration,
    run: fn() -> Outcome,
}

fn main() -> ExitCode {
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let min = |m: u64| Duration::from_secs(60 * m);
    let all = [
        Criterion { id: 1, name: "gradient correctness", budget: Duration::from_secs(30), run: gradients },
        Criterion { id: 2, name: "metric oracle equivalence", budget: Duration::from_secs(5), run: metric_oracle },
        Criterion { id: 3, name: "Shapley axioms and oracle", budget: min(2), run: shapley },
        Criterion { id: 4, name: "serialization round trip", budget: Duration::from_secs(10), run: round_trip },
        Criterion { id: 5, name: "cross-modal fusion advantage", budget: min(10), run: xor_fusion },
        Criterion { id: 6, name: "temporal-signal witness", budget: min(5), run: temporal },
        Criterion { id: 7, name: "faithfulness ordering", budget: min(5), run: faithfulness },
        Criterion { id: 8, name: "statistics correctness", budget: Duration::from_secs(10), run: statistics },
        Criterion { id: 9, name: "censoring robustness", budget: min(10), run: censoring },
        Criterion { id: 10, name: "end-to-end determinism", budget: min(10), run: determinism },
    ];
    let mut failed = 0;
    for c in all.iter().filter(|c| wanted.is_empty() || wanted.contains(&c.id)) {
        let t0 = Instant::now();
        let outcome = (c.run)();
        let took = t0.elapsed();
        let in_time = took <= c.budget;
        let (pass, detail) = match outcome {
            Ok(d) => (in_time, d),
            Err(d) => (false, d),
        };
        if !pass {
            failed += 1;
        }
        println!(
            "{} [{:>2}] {}: {} ({:.1} s, budget {} s{})",
            if pass { "PASS" } else { "FAIL" },
            c.id,
            c.name,
            detail,
            took.as_secs_f64(),
            c.budget.as_secs(),
            if in_time { "" } else { ", over budget" }
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criterion(s) failed");
        ExitCode::FAILURE
    }
}

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

// ---------------------------------------------------------------- 1

fn gradients() -> Outcome {
    let mut worst = 0.0f64;
    let mut checked = 0;
    for seed in 0..10 {
        for (name, r) in numcore::gradcheck::layer_suite(seed, 1e-5).map_err(|e| e.to_string())? {
            if r.checked == 0 {
                return Err(format!("{name} checked no parameters"));
            }
            if r.max_rel_err > 1e-4 {
                return Err(format!("{name} seed {seed}: max rel err {:.2e} ({})", r.max_rel_err, r.worst));
            }
            worst = worst.max(r.max_rel_err);
            checked += r.checked;
        }
    }
    Ok(format!("{checked} entries over 10 seeds, worst rel err {worst:.2e} ≤ 1e-4"))
}

// ---------------------------------------------------------------- 2

fn brute_auroc(p: &[f64], y: &[u8]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for i in (0..p.len()).filter(|i| y[*i] == 1) {
        for j in (0..p.len()).filter(|j| y[*j] == 0) {
            pairs += 1.0;
            wins += if p[i] > p[j] {
                1.0
            } else if p[i] == p[j] {
                0.5
            } else {
                0.0
            };
        }
    }
    wins / pairs
}

/// Mean over positives of the precision at the positive's own score.
fn brute_auprc(p: &[f64], y: &[u8]) -> f64 {
    let pos: Vec<usize> = (0..p.len()).filter(|i| y[*i] == 1).collect();
    let mut total = 0.0;
    for &i in &pos {
        let above: Vec<usize> = (0..p.len()).filter(|j| p[*j] >= p[i]).collect();
        let tp = above.iter().filter(|j| y[**j] == 1).count();
        total += tp as f64 / above.len() as f64;
    }
    total / pos.len() as f64
}

fn f1(precision: Option<f64>, recall: Option<f64>) -> f64 {
    match (precision, recall) {
        (Some(p), Some(r)) if p + r > 0.0 => 2.0 * p * r / (p + r),
        _ => 0.0,
    }
}

fn share(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// (F1 macro, sensitivity, specificity) from per-class precision and recall.
fn brute_threshold(p: &[f64], y: &[u8]) -> (f64, f64, f64) {
    let pred: Vec<u8> = p.iter().map(|v| u8::from(*v >= 0.5)).collect();
    let count = |a: u8, b: u8| pred.iter().zip(y).filter(|(q, t)| **q == a && **t == b).count();
    let per_class = |c: u8| {
        let hit = count(c, c);
        let predicted = pred.iter().filter(|q| **q == c).count();
        let actual = y.iter().filter(|t| **t == c).count();
        (share(hit, predicted), share(hit, actual))
    };
    let (p1, r1) = per_class(1);
    let (p0, r0) = per_class(0);
    ((f1(p1, r1) + f1(p0, r0)) / 2.0, r1.unwrap_or(0.0), r0.unwrap_or(0.0))
}

fn metric_oracle() -> Outcome {
    const LEVELS: [f64; 5] = [0.0, 0.3, 0.5, 0.7, 1.0];
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    let mut cases = 0usize;
    let mut check = |p: &[f64], y: &[u8]| -> std::result::Result<(), String> {
        let (f, sens, spec) = brute_threshold(p, y);
        let t = threshold_metrics(p, y, 0.5).map_err(|e| e.to_string())?;
        let mut errs = vec![(t.f1_macro - f).abs(), (t.sensitivity - sens).abs(), (t.specificity - spec).abs()];
        if y.contains(&0) && y.contains(&1) {
            let r = compute_metrics(p, y, 0.5).map_err(|e| e.to_string())?;
            errs.push((r.auroc - brute_auroc(p, y)).abs());
            errs.push((r.auprc - brute_auprc(p, y)).abs());
            errs.push((auroc(p, y).unwrap() - r.auroc).abs() + (auprc(p, y).unwrap() - r.auprc).abs());
        }
        let e = errs.into_iter().fold(0.0, f64::max);
        if e > 1e-12 {
            return Err(format!("deviation {e:.2e} on scores {p:?} labels {y:?}"));
        }
        worst = worst.max(e);
        cases += 1;
        Ok(())
    };
    for n in 1..=8usize {
        for mask in 0u32..(1 << n) {
            let y: Vec<u8> = (0..n).map(|i| ((mask >> i) & 1) as u8).collect();
            if n <= 5 {
                // every score vector over the five levels, ties included
                for code in 0..LEVELS.len().pow(n as u32) {
                    let mut c = code;
                    let p: Vec<f64> = (0..n)
                        .map(|_| {
                            let v = LEVELS[c % LEVELS.len()];
                            c /= LEVELS.len();
                            v
                        })
                        .collect();
                    check(&p, &y)?;
                }
            } else {
                for r in 0..64 {
                    let p: Vec<f64> = (0..n)
                        .map(|_| {
                            if r % 2 == 0 {
                                LEVELS[rng.random_range(0..LEVELS.len())]
                            } else {
                                rng.random::<f64>()
                            }
                        })
                        .collect();
                    check(&p, &y)?;
                }
            }
        }
    }
    Ok(format!("{cases} fixtures with n ≤ 8, max deviation {worst:.1e} ≤ 1e-12"))
}

// ---------------------------------------------------------------- 3

struct TableGame {
    m: usize,
    table: Vec<f64>,
}

impl TableGame {
    fn value(&self, s: &[bool]) -> f64 {
        self.table[s.iter().enumerate().map(|(i, b)| (*b as usize) << i).sum::<usize>()]
    }
}

impl Game for TableGame {
    fn players(&self) -> usize {
        self.m
    }

    fn values(&self, coalitions: &[Vec<bool>]) -> metafuse::Result<Vec<f64>> {
        Ok(coalitions.iter().map(|s| self.value(s)).collect())
    }
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Shapley's subset formula, independent of the library.
fn oracle_shapley(g: &TableGame) -> Vec<f64> {
    let m = g.m;
    let mut phi = vec![0.0; m];
    for (i, out) in phi.iter_mut().enumerate() {
        for mask in 0usize..(1 << m) {
            if mask >> i & 1 == 1 {
                continue;
            }
            let s = mask.count_ones() as usize;
            let w = factorial(s) * factorial(m - s - 1) / factorial(m);
            *out += w * (g.table[mask | 1 << i] - g.table[mask]);
        }
    }
    phi
}

/// Random game on 10 players. Players 8 and 9 are null; players 0 and 1
/// are interchangeable.
fn structured_game(rng: &mut ChaCha8Rng) -> TableGame {
    let m = 10;
    let mut w: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
    w[1] = w[0];
    let pair: Vec<f64> = (0..64).map(|_| rng.random_range(-0.5..0.5)).collect();
    let bump = rng.random_range(-1.0..1.0);
    let table = (0usize..1 << m)
        .map(|mask| {
            let has = |i: usize| (mask >> i & 1) as f64;
            let mut v = bump + (0..8).map(|i| w[i] * has(i)).sum::<f64>();
            // symmetric in 0 and 1: interactions depend on their count only
            v += (has(0) + has(1)).powi(2) * pair[0];
            for a in 2..8 {
                for b in (a + 1)..8 {
                    v += pair[a * 8 + b] * has(a) * has(b);
                }
                v += pair[a] * (has(0) + has(1)) * has(a);
            }
            v
        })
        .collect();
    TableGame { m, table }
}

fn random_game(rng: &mut ChaCha8Rng) -> TableGame {
    TableGame {
        m: 10,
        table: (0..1 << 10).map(|_| rng.random_range(-2.0..2.0)).collect(),
    }
}

fn shapley() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut axiom, mut oracle, mut kernel) = (0.0f64, 0.0f64, 0.0f64);
    for f in 0..40 {
        let g = if f % 2 == 0 { structured_game(&mut rng) } else { random_game(&mut rng) };
        let a = exact_shapley(&g).map_err(|e| e.to_string())?;
        let full = g.table[(1 << g.m) - 1];
        axiom = axiom.max((a.phi.iter().sum::<f64>() - (full - g.table[0])).abs());
        if f % 2 == 0 {
            axiom = axiom.max(a.phi[8].abs()).max(a.phi[9].abs());
            axiom = axiom.max((a.phi[0] - a.phi[1]).abs());
        }
        let o = oracle_shapley(&g);
        oracle = oracle.max(a.phi.iter().zip(&o).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max));
        let k = kernel_shap(&g, 1 << g.m, f as u64).map_err(|e| e.to_string())?;
        kernel = kernel.max(a.phi.iter().zip(&k.phi).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max));
    }
    ensure(
        axiom <= 1e-8 && oracle <= 1e-8 && kernel <= 1e-6,
        format!(
            "40 games, M=10: axioms {axiom:.1e} ≤ 1e-8, vs subset formula {oracle:.1e}, KernelSHAP vs exact {kernel:.1e} ≤ 1e-6"
        ),
    )
}

// ---------------------------------------------------------------- 4

fn random_sample(rng: &mut ChaCha8Rng, i: usize) -> MultimodalSample {
    let n_static = rng.random_range(0..40);
    let lab_channels = rng.random_range(0..12);
    let med_groups = rng.random_range(0..20);
    let n_notes = rng.random_range(0..6);
    MultimodalSample {
        patient_id: format!("S{i}"),
        statics: (0..n_static).map(|_| f64::from(rng.random_range(0..2u8))).collect(),
        labs: (0..lab_channels * MONTHS)
            .map(|_| if rng.random_bool(0.3) { -1.0 } else { rng.random_range(-5.0..50.0) })
            .collect(),
        meds: (0..med_groups * MONTHS).map(|_| f64::from(rng.random_range(0..4u8))).collect(),
        notes: (0..n_notes)
            .map(|_| (0..rng.random_range(0..30)).map(|_| rng.random_range(0..5000u32)).collect())
            .collect(),
        note_months: vec![1; n_notes],
        label: rng.random_range(0..2u8),
    }
}

/// Expected sequence built from the declared layout: statics, `+∞`, labs
/// month by month with `-∞` between months, `+∞`, meds likewise, `+∞`,
/// notes with `-∞` between notes.
fn expected_sequence(s: &MultimodalSample) -> Vec<f64> {
    let series = |data: &[f64]| -> Vec<f64> {
        let channels = data.len() / MONTHS;
        let mut out = Vec::new();
        for t in 0..MONTHS {
            if t > 0 {
                out.push(f64::NEG_INFINITY);
            }
            for c in 0..channels {
                out.push(data[c * MONTHS + t]);
            }
        }
        out
    };
    let mut v = s.statics.clone();
    v.push(f64::INFINITY);
    v.extend(series(&s.labs));
    v.push(f64::INFINITY);
    v.extend(series(&s.meds));
    v.push(f64::INFINITY);
    let notes: Vec<Vec<f64>> = s.notes.iter().map(|n| n.iter().map(|t| *t as f64).collect()).collect();
    v.extend(notes.join(&f64::NEG_INFINITY));
    v
}

fn round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut sentinels = 0usize;
    for i in 0..1000 {
        let s = random_sample(&mut rng, i);
        let ser = serialize(&s).map_err(|e| e.to_string())?;
        let back = deserialize(&ser).map_err(|e| e.to_string())?;
        if back.statics != s.statics || back.labs != s.labs || back.meds != s.meds || back.notes != s.notes {
            return Err(format!("sample {i} did not survive the round trip"));
        }
        let want = expected_sequence(&s);
        if ser.values != want {
            return Err(format!("sample {i}: sequence differs from the declared layout"));
        }
        sentinels += want.iter().filter(|v| v.is_infinite()).count();
    }
    Ok(format!("1000 samples identical after round trip, {sentinels} sentinels at declared positions"))
}

// ---------------------------------------------------------------- shared fixtures

fn small_text(max_len: usize) -> TextArch {
    TextArch {
        dim: 16,
        heads: 2,
        blocks: 1,
        ff_dim: 32,
        max_len,
        ..Default::default()
    }
}

fn stage_config(max_len: usize) -> StageConfig {
    StageConfig {
        jobs: 1,
        inner_folds: 3,
        train: TrainConfig {
            max_epochs: 100,
            patience: 20,
            text: small_text(max_len),
            ..Default::default()
        },
        ..Default::default()
    }
}

struct Prepared {
    raw: Vec<RawPatient>,
    vocab: Vocabularies,
    extract: ExtractConfig,
    inputs: Inputs,
    samples: Vec<MultimodalSample>,
    y: Vec<u8>,
    dev: Vec<usize>,
    hold: Vec<usize>,
}

impl Prepared {
    fn new(gen: &GeneratorConfig, max_len: usize, token_vocab: usize) -> std::result::Result<Self, String> {
        let raw = generate_cohort(gen).map_err(|e| e.to_string())?;
        let y: Vec<u8> = raw.iter().map(|p| p.label.as_f64() as u8).collect();
        let (dev, hold) = stratified_split(&y, 0.8, gen.seed).map_err(|e| e.to_string())?;
        let dev_raw: Vec<RawPatient> = dev.iter().map(|i| raw[*i].clone()).collect();
        let pre = PreprocessConfig {
            max_len,
            token_vocab_size: token_vocab,
            ..Default::default()
        };
        let vocab = Vocabularies::fit(&dev_raw, pre).map_err(|e| e.to_string())?;
        let samples = raw.iter().map(|p| vocab.encode(p)).collect::<metafuse::Result<Vec<_>>>().map_err(|e| e.to_string())?;
        let extract = ExtractConfig {
            text_max_len: max_len,
            ..Default::default()
        };
        let inputs = Inputs::build(&samples, vocab.tokenizer.vocab_size(), &extract).map_err(|e| e.to_string())?;
        Ok(Self {
            raw,
            vocab,
            extract,
            inputs,
            samples,
            y,
            dev,
            hold,
        })
    }

    fn hold_labels(&self) -> Vec<u8> {
        self.hold.iter().map(|i| self.y[*i]).collect()
    }

    fn inputs_of(&self, samples: &[MultimodalSample]) -> metafuse::Result<Inputs> {
        Inputs::build(samples, self.vocab.tokenizer.vocab_size(), &self.extract)
    }
}

fn deep_only(m: Modality) -> Vec<HyperParams> {
    match m {
        Modality::Static | Modality::Early => vec![HyperParams::Mlp {
            dropout: 0.2,
            units_multiplier: 1,
        }],
        Modality::Labs | Modality::Meds => vec![HyperParams::GruRnn {
            dropout: 0.2,
            units_multiplier: 1,
        }],
        Modality::Text => vec![HyperParams::TextEncoder {
            dropout: 0.2,
            units_multiplier: 1,
        }],
    }
}

/// Intermediate fusion over one deep donor per modality. With a single
/// candidate per modality there is nothing to select, so the donors are
/// fitted on the development rows directly.
fn fit_intermediate(
    d: &Prepared,
    train: &TrainConfig,
    seed: u64,
) -> std::result::Result<(Vec<TrainedModel>, IntermediateModel), String> {
    let ydev: Vec<u8> = d.dev.iter().map(|i| d.y[*i]).collect();
    let dev = d.inputs.select(&d.dev);
    let donors = Modality::UNIMODAL
        .iter()
        .enumerate()
        .map(|(k, m)| fit(&deep_only(*m)[0], *m, dev.get(*m), &ydev, train, seed + 101 * k as u64))
        .collect::<metafuse::Result<Vec<_>>>()
        .map_err(|e| e.to_string())?;
    let nets: Vec<(Modality, &Net)> = donors.iter().filter_map(|t| Some((t.modality, t.as_net()?))).collect();
    let mut model = build_intermediate(&nets, &IfConfig::default(), seed ^ 0x1f).map_err(|e| e.to_string())?;
    let xs: Vec<&Features> = model.modalities.iter().map(|m| dev.get(*m)).collect();
    model.fit(&xs, &ydev, train, seed ^ 0x2f).map_err(|e| e.to_string())?;
    Ok((donors, model))
}

// ---------------------------------------------------------------- 5

/// One point per model kind: a linear and a deep model for tabular data,
/// a transform and a deep model for series, the encoder for text.
fn reduced_grid(m: Modality) -> Vec<HyperParams> {
    match m {
        Modality::Static | Modality::Early => vec![
            HyperParams::Logreg {
                c: 1.0,
                penalty: Penalty::L2,
            },
            HyperParams::Mlp {
                dropout: 0.2,
                units_multiplier: 1,
            },
        ],
        Modality::Labs | Modality::Meds => vec![
            HyperParams::Rocket { num_kernels: 1000 },
            HyperParams::GruRnn {
                dropout: 0.2,
                units_multiplier: 1,
            },
        ],
        Modality::Text => deep_only(m),
    }
}

fn xor_fusion() -> Outcome {
    let names = ["IF", "Static", "Labs", "Meds", "Text"];
    let mut scores = vec![Vec::new(); names.len()];
    for seed in 0..5 {
        let gen = GeneratorConfig {
            n_patients: 800,
            positive_fraction: 0.5,
            seed,
            signal: SignalPlan::null(),
            xor: Some(XorPlan::default()),
            ..Default::default()
        };
        let d = Prepared::new(&gen, 32, 256)?;
        let cfg = StageConfig {
            early: false,
            late: false,
            ..stage_config(32)
        };
        let st = train_stages(&d.inputs, &d.y, &d.dev, &cfg, &reduced_grid, seed).map_err(|e| e.to_string())?;
        let yh = d.hold_labels();
        for (name, p) in st.predict(&d.inputs.select(&d.hold)).map_err(|e| e.to_string())? {
            if let Some(k) = names.iter().position(|n| *n == name) {
                scores[k].push(auroc(&p, &yh).map_err(|e| e.to_string())?);
            }
        }
    }
    if scores.iter().any(|s| s.len() != 5) {
        return Err("some model was not trained on every seed".into());
    }
    let means: Vec<f64> = scores.iter().map(|s| mean(s)).collect();
    let uni_max = means[1..].iter().copied().fold(0.0, f64::max);
    let detail = names
        .iter()
        .zip(&means)
        .map(|(n, m)| format!("{n} {m:.3}"))
        .collect::<Vec<_>>()
        .join(", ");
    ensure(
        means[0] >= 0.85 && uni_max <= 0.60,
        format!("mean test AUROC over 5 seeds: {detail} (need IF ≥ 0.85, unimodal ≤ 0.60)"),
    )
}

// ---------------------------------------------------------------- 6

fn temporal() -> Outcome {
    let early_grid = |m: Modality| match m {
        Modality::Labs => deep_only(m),
        _ => vec![
            HyperParams::Logreg {
                c: 1.0,
                penalty: Penalty::L2,
            },
            HyperParams::Gbt {
                n_estimators: 100,
                max_depth: 3,
            },
            HyperParams::Rforest {
                n_estimators: 100,
                max_depth: 5,
            },
            HyperParams::Mlp {
                dropout: 0.2,
                units_multiplier: 1,
            },
        ],
    };
    let (mut gru, mut ef) = (Vec::new(), Vec::new());
    for seed in 0..5 {
        let gen = GeneratorConfig {
            n_patients: 500,
            positive_fraction: 0.4,
            seed,
            signal: SignalPlan {
                lab_effect: vec![0.8, 0.8, 0.8],
                lab_effect_months: vec![4, 5, 6],
                lab_compensate: true,
                ..SignalPlan::null()
            },
            ..Default::default()
        };
        let d = Prepared::new(&gen, 32, 256)?;
        let cfg = StageConfig {
            modalities: vec![Modality::Labs],
            late: false,
            intermediate: false,
            ..stage_config(32)
        };
        let st = train_stages(&d.inputs, &d.y, &d.dev, &cfg, &early_grid, seed).map_err(|e| e.to_string())?;
        let yh = d.hold_labels();
        for (name, p) in st.predict(&d.inputs.select(&d.hold)).map_err(|e| e.to_string())? {
            let v = auprc(&p, &yh).map_err(|e| e.to_string())?;
            match name.as_str() {
                "Labs" => gru.push(v),
                pipeline::EARLY_NAME => ef.push(v),
                _ => {}
            }
        }
    }
    if gru.len() != 5 || ef.len() != 5 {
        return Err("GRU or EF missing on some seed".into());
    }
    let (g, e) = (mean(&gru), mean(&ef));
    ensure(g >= e, format!("mean test AUPRC over 5 seeds: GRU on labs {g:.3}, EF {e:.3} (need GRU ≥ EF)"))
}

// ---------------------------------------------------------------- 7

fn faithfulness() -> Outcome {
    let grid = even_grid(10);
    let mut areas = [Vec::new(), Vec::new(), Vec::new()];
    let mut curves = vec![vec![0.0; grid.len()]; 3];
    for seed in 0..5 {
        let gen = GeneratorConfig {
            n_patients: 400,
            positive_fraction: 0.5,
            seed,
            ..Default::default()
        };
        let d = Prepared::new(&gen, 32, 256)?;
        let (_, model) = fit_intermediate(&d, &stage_config(32).train, seed)?;
        let predict = |xs: &[MultimodalSample]| predict_intermediate(&model, &d.inputs_of(xs)?);
        let probs = predict_intermediate(&model, &d.inputs.select(&d.hold)).map_err(|e| e.to_string())?;
        // explain confidently predicted positives so every curve starts above 0.5
        let chosen: Vec<MultimodalSample> = d
            .hold
            .iter()
            .zip(&probs)
            .filter(|(i, p)| d.y[**i] == 1 && **p > 0.5)
            .take(8)
            .map(|(i, _)| d.samples[*i].clone())
            .collect();
        if chosen.is_empty() {
            return Err(format!("seed {seed}: no positive predicted above 0.5"));
        }
        let explanations = chosen
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let cfg = ExplainConfig {
                    granularity: Granularity::Feature,
                    seed: seed * 100 + i as u64,
                    ..Default::default()
                };
                explain_sample(s, &predict, &cfg)
            })
            .collect::<metafuse::Result<Vec<SampleExplanation>>>()
            .map_err(|e| e.to_string())?;
        for (k, strategy) in Strategy::ALL.iter().enumerate() {
            let c = perturbation_curve(&predict, &chosen, &explanations, *strategy, &grid, &Imputation::default(), seed)
                .map_err(|e| e.to_string())?;
            areas[k].push(c.drop_area());
            for (acc, y) in curves[k].iter_mut().zip(&c.y) {
                *acc += y / 5.0;
            }
        }
    }
    let [high, random, low] = [mean(&areas[0]), mean(&areas[1]), mean(&areas[2])];
    let crossing = |y: &[f64]| grid.iter().zip(y).find(|(_, v)| **v < 0.5).map(|(x, _)| *x);
    let (ch, cl) = (crossing(&curves[0]), crossing(&curves[2]));
    let crosses_first = match (ch, cl) {
        (Some(h), Some(l)) => h < l,
        (Some(_), None) => true,
        _ => false,
    };
    let show = |c: Option<f64>| c.map_or("never".to_string(), |v| format!("{v:.1}"));
    ensure(
        high >= random && random >= low && crosses_first,
        format!(
            "drop areas high {high:.3} ≥ random {random:.3} ≥ low {low:.3}; 0.5 crossing high {} < low {}",
            show(ch),
            show(cl)
        ),
    )
}

// ---------------------------------------------------------------- 8

/// Studentized range quantiles `q_α(k, ∞)`, k = 2..=10 (Harter, 1960).
const HARTER_05: [f64; 9] = [2.772, 3.314, 3.633, 3.858, 4.030, 4.170, 4.286, 4.387, 4.474];
const HARTER_10: [f64; 9] = [2.326, 2.902, 3.240, 3.478, 3.661, 3.808, 3.931, 4.037, 4.129];
/// Demšar's (2006) Nemenyi constants, the Harter values over √2 rounded to
/// three decimals.
const DEMSAR_05: [f64; 9] = [1.960, 2.343, 2.569, 2.728, 2.850, 2.949, 3.031, 3.102, 3.164];
const DEMSAR_10: [f64; 9] = [1.645, 2.052, 2.291, 2.459, 2.589, 2.693, 2.780, 2.855, 2.920];

fn statistics() -> Outcome {
    // four blocks, three classifiers, identical order in every block
    let scores = vec![vec![0.9, 0.8, 0.7], vec![0.85, 0.75, 0.6], vec![0.7, 0.65, 0.5], vec![0.95, 0.9, 0.1]];
    let r = RankMatrix::new(scores).map_err(|e| e.to_string())?;
    let f = friedman_test(&r).map_err(|e| e.to_string())?;
    if (f.chi2 - 8.0).abs() > 1e-9 || (f.p_value - 0.0183).abs() > 1e-3 {
        return Err(format!("Friedman χ² {} p {} (want 8, 0.0183)", f.chi2, f.p_value));
    }

    let mut cd_err = 0.0f64;
    let mut table_err = 0.0f64;
    for (alpha, harter, demsar) in [(0.05, HARTER_05, DEMSAR_05), (0.10, HARTER_10, DEMSAR_10)] {
        for k in 2..=10usize {
            let q = harter[k - 2] / 2f64.sqrt();
            table_err = table_err.max((q - demsar[k - 2]).abs());
            let cover = ptukey_inf(harter[k - 2], k);
            if (cover - (1.0 - alpha)).abs() > 2e-3 {
                return Err(format!("table entry k={k} α={alpha} has coverage {cover:.4}"));
            }
            for n in [1usize, 4, 10, 25, 100, 1000] {
                let want = q * ((k * (k + 1)) as f64 / (6.0 * n as f64)).sqrt();
                let got = critical_difference(k, n, alpha).map_err(|e| e.to_string())?;
                cd_err = cd_err.max((got - want).abs());
            }
        }
    }
    if cd_err > 1e-6 || table_err > 5e-4 {
        return Err(format!("CD deviation {cd_err:.1e}, table consistency {table_err:.1e}"));
    }

    let shapes = [(743usize, 281usize), (387, 111), (870, 458), (1890, 515)];
    let mut worst = 0.0f64;
    for (n, pos) in shapes {
        let y: Vec<u8> = (0..n).map(|i| u8::from(i % n < pos)).collect();
        for seed in 0..10 {
            let prevalence = pos as f64 / n as f64;
            let off = |idx: &[usize]| {
                let p = idx.iter().filter(|i| y[**i] == 1).count() as f64;
                (p - prevalence * idx.len() as f64).abs()
            };
            let (dev, hold) = stratified_split(&y, 0.8, seed).map_err(|e| e.to_string())?;
            worst = worst.max(off(&dev)).max(off(&hold));
            for fold in stratified_kfold(&y, 5, seed).map_err(|e| e.to_string())? {
                worst = worst.max(off(&fold));
            }
        }
    }
    ensure(
        worst <= 1.0,
        format!(
            "χ² {:.3} p {:.4}; CD vs table max dev {cd_err:.1e}; split prevalence off by ≤ {worst:.2} patients on 4 shapes",
            f.chi2, f.p_value
        ),
    )
}

// ---------------------------------------------------------------- 9

fn censoring() -> Outcome {
    let censor = Censor::default();
    let (mut if_drop, mut text_drop) = (Vec::new(), Vec::new());
    let mut report = Vec::new();
    const SEEDS: u64 = 4;
    for seed in 0..SEEDS {
        let gen = GeneratorConfig {
            n_patients: 1000,
            positive_fraction: 0.4,
            seed,
            // short notes and a word-level vocabulary keep the whole record
            // inside a 64-token window
            notes_per_patient_range: [1, 2],
            signal: SignalPlan {
                lab_effect: vec![1.5; 4],
                // the sentence is the only text signal; it appears in 70% of
                // positives so the labs are needed for the rest
                explicit_metastasis_token_prob: 0.7,
                ..SignalPlan::null()
            },
            ..Default::default()
        };
        let d = Prepared::new(&gen, 64, 2000)?;
        let (donors, model) = fit_intermediate(&d, &stage_config(64).train, seed)?;
        let model = &model;
        let unimodal = |m: Modality| donors.iter().find(|t| t.modality == m).ok_or(format!("no {} model", m.name()));
        let text = unimodal(Modality::Text)?;
        let yh = d.hold_labels();
        let clean = d.inputs.select(&d.hold);
        let censored_samples = d
            .hold
            .iter()
            .map(|i| d.vocab.encode_with(&d.raw[*i], Some(&censor)))
            .collect::<metafuse::Result<Vec<_>>>()
            .map_err(|e| e.to_string())?;
        let censored = d.inputs_of(&censored_samples).map_err(|e| e.to_string())?;
        let score = |p: metafuse::Result<Vec<f64>>| -> std::result::Result<f64, String> {
            auroc(&p.map_err(|e| e.to_string())?, &yh).map_err(|e| e.to_string())
        };
        let ifc = score(predict_intermediate(model, &clean))?;
        let ifx = score(predict_intermediate(model, &censored))?;
        let tc = score(text.predict_proba(&clean.text))?;
        let tx = score(text.predict_proba(&censored.text))?;
        let lab = score(unimodal(Modality::Labs)?.predict_proba(&clean.labs))?;
        if_drop.push(ifc - ifx);
        text_drop.push(tc - tx);
        report.push(format!("IF {ifc:.3}->{ifx:.3} Text {tc:.3}->{tx:.3} Labs {lab:.3}"));
    }
    let (a, b) = (mean(&if_drop), mean(&text_drop));
    ensure(
        a < 0.10 && b > 0.20,
        format!(
            "mean AUROC drop IF {a:.3} < 0.10, Text {b:.3} > 0.20 over {SEEDS} seeds [{}]",
            report.join("; ")
        ),
    )
}

// ---------------------------------------------------------------- 10

fn run_cli(root: &Path, args: &[&str]) -> std::result::Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_metafuse"))
        .current_dir(root)
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("metafuse {args:?} failed: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

fn small_run_config() -> RunConfig {
    let mut c = RunConfig {
        seed: 11,
        jobs: 2,
        ..Default::default()
    };
    c.cohort.generator.n_patients = 240;
    c.preprocess.max_len = 32;
    c.preprocess.token_vocab_size = 256;
    c.extract.text_max_len = 32;
    c.train.max_epochs = 30;
    c.train.patience = 10;
    c.train.text = small_text(32);
    c.split.inner_folds = 3;
    c.grid.statics = Some(reduced_grid(Modality::Static));
    c.grid.early = Some(reduced_grid(Modality::Early));
    c.grid.labs = Some(reduced_grid(Modality::Labs));
    c.grid.meds = Some(reduced_grid(Modality::Meds));
    c.grid.text = Some(reduced_grid(Modality::Text));
    c.fusion.head.frozen_epochs = 30;
    c.fusion.head.finetune_epochs = 30;
    c.explain.patients = 3;
    c.explain.coalitions = Some(256);
    c.bootstrap.replicates = 200;
    c
}

fn csv_files(dir: &Path) -> std::result::Result<Vec<(String, Vec<u8>)>, String> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| e.to_string())? {
        let p = entry.map_err(|e| e.to_string())?.path();
        if p.extension().is_some_and(|e| e == "csv") {
            let name = p.file_name().unwrap().to_string_lossy().into_owned();
            out.push((name, std::fs::read(&p).map_err(|e| e.to_string())?));
        }
    }
    out.sort();
    Ok(out)
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = tmp.path();
    let toml = small_run_config().to_toml().map_err(|e| e.to_string())?;
    std::fs::write(root.join("run.toml"), toml).map_err(|e| e.to_string())?;
    let mut tables = Vec::new();
    for run in ["first", "second"] {
        for cmd in ["train", "evaluate", "explain", "report"] {
            run_cli(root, &["--config", "run.toml", cmd, "--run", run])?;
        }
        tables.push(csv_files(&root.join(run))?);
    }
    let names: Vec<&str> = tables[0].iter().map(|(n, _)| n.as_str()).collect();
    for want in ["predictions.csv", "results.csv", "attributions.csv", "perturbation.csv", "censoring.csv"] {
        if !names.contains(&want) {
            return Err(format!("{want} missing from the run directory"));
        }
    }
    let differing: Vec<&str> = tables[0]
        .iter()
        .zip(&tables[1])
        .filter(|(a, b)| a != b)
        .map(|(a, _)| a.0.as_str())
        .collect();
    ensure(
        tables[0].len() == tables[1].len() && differing.is_empty(),
        format!("{} CSV files compared, differing: {differing:?}", names.len()),
    )
}
