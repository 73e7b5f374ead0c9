//! Synthetic EHR cohorts with planted, tunable per-modality signal.
//!
//! Each patient covers `months` monthly buckets; month 7 is the outcome
//! month (metastasis codes C77–C79 for positives) and months 1–6 form the
//! input window. Everything is a pure function of the config.

use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const OUTCOME_MONTH: u8 = 7;
pub const WINDOW_MONTHS: u8 = 6;
pub const START_YEAR: i32 = 2020;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Female,
    Male,
    Other,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Positive,
    Negative,
}

impl Label {
    pub fn as_f64(self) -> f64 {
        match self {
            Label::Positive => 1.0,
            Label::Negative => 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosisEvent {
    pub month: u8,
    pub code: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabEvent {
    pub month: u8,
    pub channel: String,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MedEvent {
    pub month: u8,
    pub code: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Note {
    pub month: u8,
    pub order: u32,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawPatient {
    pub patient_id: String,
    pub gender: Gender,
    pub birth_year: i32,
    pub diagnosis_events: Vec<DiagnosisEvent>,
    pub lab_events: Vec<LabEvent>,
    pub med_events: Vec<MedEvent>,
    pub notes: Vec<Note>,
    pub label: Label,
}

impl RawPatient {
    pub fn has_event_in(&self, month: u8) -> bool {
        self.diagnosis_events.iter().any(|e| e.month == month)
            || self.lab_events.iter().any(|e| e.month == month)
            || self.med_events.iter().any(|e| e.month == month)
            || self.notes.iter().any(|e| e.month == month)
    }
}

/// Odds ratio applied to one comorbidity code.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StaticEffect {
    pub code: String,
    /// Probability of the code among negatives.
    pub base_prevalence: f64,
    pub odds_ratio: f64,
}

/// A suspicion token inserted into one in-window note of a positive patient.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TextEffect {
    pub token: String,
    pub prob: f64,
}

/// Where positives differ from negatives. [`SignalPlan::null`] makes the
/// label independent of every feature.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SignalPlan {
    /// Additive shift of positive patients' lab values, per channel, in
    /// units of the channel's baseline median.
    pub lab_effect: Vec<f64>,
    /// Months receiving `lab_effect`.
    pub lab_effect_months: Vec<u8>,
    /// Subtract the same shift in months 1–3 so six-month averages carry no
    /// signal in expectation while the temporal pattern remains.
    pub lab_compensate: bool,
    /// Multiplier on positive patients' monthly prescription rate, per channel.
    pub med_effect: Vec<f64>,
    pub static_effect: Vec<StaticEffect>,
    pub text_effect: Vec<TextEffect>,
    pub explicit_metastasis_token_prob: f64,
}

impl Default for SignalPlan {
    fn default() -> Self {
        Self {
            lab_effect: vec![0.6, 0.4],
            lab_effect_months: vec![4, 5, 6],
            lab_compensate: false,
            med_effect: vec![2.0, 1.5],
            static_effect: vec![
                StaticEffect {
                    code: "R18.8".into(),
                    base_prevalence: 0.1,
                    odds_ratio: 3.0,
                },
                StaticEffect {
                    code: "R63.4".into(),
                    base_prevalence: 0.15,
                    odds_ratio: 2.0,
                },
            ],
            text_effect: vec![
                TextEffect {
                    token: "nodular".into(),
                    prob: 0.5,
                },
                TextEffect {
                    token: "uptake".into(),
                    prob: 0.3,
                },
            ],
            explicit_metastasis_token_prob: 0.2,
        }
    }
}

impl SignalPlan {
    pub fn null() -> Self {
        Self {
            lab_effect: Vec::new(),
            lab_effect_months: vec![4, 5, 6],
            lab_compensate: false,
            med_effect: Vec::new(),
            static_effect: Vec::new(),
            text_effect: Vec::new(),
            explicit_metastasis_token_prob: 0.0,
        }
    }

    fn validate(&self, n_lab: usize, n_med: usize) -> Result<()> {
        if self.lab_effect.len() > n_lab {
            return Err(Error::Config(format!(
                "lab_effect has {} entries but only {n_lab} lab channels",
                self.lab_effect.len()
            )));
        }
        if self.med_effect.len() > n_med {
            return Err(Error::Config(format!(
                "med_effect has {} entries but only {n_med} med channels",
                self.med_effect.len()
            )));
        }
        if self.lab_effect.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("lab_effect must be finite".into()));
        }
        if self.med_effect.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Config("med_effect multipliers must be finite and ≥ 0".into()));
        }
        if let Some(m) = self.lab_effect_months.iter().find(|m| !(1..=WINDOW_MONTHS).contains(m)) {
            return Err(Error::Config(format!("lab_effect_months entry {m} outside 1..=6")));
        }
        for s in &self.static_effect {
            if !(0.0..=1.0).contains(&s.base_prevalence) || !s.odds_ratio.is_finite() || s.odds_ratio < 0.0 {
                return Err(Error::Config(format!(
                    "static effect {}: prevalence must be in [0,1] and odds ratio finite ≥ 0",
                    s.code
                )));
            }
        }
        for t in &self.text_effect {
            if !(0.0..=1.0).contains(&t.prob) {
                return Err(Error::Config(format!("text effect {}: prob {} not in [0,1]", t.token, t.prob)));
            }
            if t.token.split_whitespace().count() != 1 {
                return Err(Error::Config(format!("text effect token `{}` must be one word", t.token)));
            }
        }
        if !(0.0..=1.0).contains(&self.explicit_metastasis_token_prob) {
            return Err(Error::Config("explicit_metastasis_token_prob not in [0,1]".into()));
        }
        Ok(())
    }
}

/// Cross-modal plan: each patient gets a lab flag and a text flag with
/// `label = lab_flag XOR text_flag`. Positives are (1,0) or (0,1) and
/// negatives (0,0) or (1,1), each with probability 1/2, so each flag alone
/// is independent of the label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct XorPlan {
    pub lab_channel: usize,
    /// Shift in baseline-median units applied to every in-window value.
    pub lab_shift: f64,
    pub text_token: String,
}

impl Default for XorPlan {
    fn default() -> Self {
        Self {
            lab_channel: 0,
            lab_shift: 1.0,
            text_token: "opacity".into(),
        }
    }
}

/// Group probabilities (youth, adult, senior) and (female, male, other).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Demographics {
    pub age_groups: [f64; 3],
    pub genders: [f64; 3],
    /// ICD-10 code of the primary tumour, recorded in month 1.
    pub primary_code: String,
}

impl Default for Demographics {
    fn default() -> Self {
        Self {
            age_groups: [0.02, 0.48, 0.50],
            genders: [0.5, 0.5, 0.0],
            primary_code: "C80.9".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub n_patients: usize,
    pub positive_fraction: f64,
    pub seed: u64,
    pub signal: SignalPlan,
    pub xor: Option<XorPlan>,
    pub n_lab_channels: usize,
    pub n_med_channels: usize,
    /// Size of the closed word list the note grammar draws from.
    pub vocab_size: usize,
    pub notes_per_patient_range: [usize; 2],
    pub months: u8,
    /// Probability a lab channel is measured in a given month.
    pub lab_observation_prob: f64,
    /// Mean background diagnoses per month.
    pub diagnoses_per_month: f64,
    pub demographics: Demographics,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            n_patients: 200,
            positive_fraction: 0.3,
            seed: 0,
            signal: SignalPlan::default(),
            xor: None,
            n_lab_channels: 8,
            n_med_channels: 10,
            vocab_size: 300,
            notes_per_patient_range: [4, 12],
            months: 7,
            lab_observation_prob: 0.75,
            diagnoses_per_month: 0.8,
            demographics: Demographics::default(),
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_patients < 20 {
            return Err(Error::Config(format!("n_patients must be ≥ 20, got {}", self.n_patients)));
        }
        if !(self.positive_fraction > 0.0 && self.positive_fraction < 1.0) {
            return Err(Error::Config(format!(
                "positive_fraction must be in (0, 1), got {}",
                self.positive_fraction
            )));
        }
        if self.months < OUTCOME_MONTH {
            return Err(Error::Config(format!("months must be ≥ 7, got {}", self.months)));
        }
        if self.n_lab_channels == 0 || self.n_med_channels == 0 {
            return Err(Error::Config("n_lab_channels and n_med_channels must be ≥ 1".into()));
        }
        if self.vocab_size < BASE_WORDS.len() {
            return Err(Error::Config(format!(
                "vocab_size must be ≥ {}, got {}",
                BASE_WORDS.len(),
                self.vocab_size
            )));
        }
        let [lo, hi] = self.notes_per_patient_range;
        if lo == 0 || lo > hi {
            return Err(Error::Config(format!(
                "notes_per_patient_range must satisfy 1 ≤ min ≤ max, got [{lo}, {hi}]"
            )));
        }
        if !(0.0..=1.0).contains(&self.lab_observation_prob) {
            return Err(Error::Config("lab_observation_prob not in [0,1]".into()));
        }
        if !(self.diagnoses_per_month >= 0.0 && self.diagnoses_per_month.is_finite()) {
            return Err(Error::Config("diagnoses_per_month must be finite and ≥ 0".into()));
        }
        for probs in [&self.demographics.age_groups[..], &self.demographics.genders[..]] {
            let s: f64 = probs.iter().sum();
            if probs.iter().any(|p| *p < 0.0) || (s - 1.0).abs() > 1e-6 {
                return Err(Error::Config(format!("demographic probabilities {probs:?} must sum to 1")));
            }
        }
        if let Some(x) = &self.xor {
            if x.lab_channel >= self.n_lab_channels {
                return Err(Error::Config(format!(
                    "xor lab_channel {} out of range for {} channels",
                    x.lab_channel, self.n_lab_channels
                )));
            }
            if !x.lab_shift.is_finite() || x.text_token.split_whitespace().count() != 1 {
                return Err(Error::Config("xor plan needs a finite shift and a one-word token".into()));
            }
        }
        self.signal.validate(self.n_lab_channels, self.n_med_channels)
    }

    pub fn n_positives(&self) -> usize {
        (self.n_patients as f64 * self.positive_fraction).round() as usize
    }
}

/// Fixture with Table 1 cohort shape: size, positive count and
/// class-independent age/gender marginals.
pub fn cohort_fixtures() -> Vec<(&'static str, GeneratorConfig)> {
    let fixture = |n: usize, pos: usize, ages: [f64; 3], genders: [f64; 3], code: &str| GeneratorConfig {
        n_patients: n,
        positive_fraction: pos as f64 / n as f64,
        demographics: Demographics {
            age_groups: ages,
            genders,
            primary_code: code.into(),
        },
        ..GeneratorConfig::default()
    };
    let share = |counts: [f64; 3]| {
        let s: f64 = counts.iter().sum();
        counts.map(|c| c / s)
    };
    vec![
        (
            "breast-like",
            fixture(743, 281, share([1., 380., 362.]), share([734., 9., 0.]), "C50.9"),
        ),
        (
            "colon-like",
            fixture(387, 111, share([6., 126., 255.]), share([192., 194., 1.]), "C18.9"),
        ),
        (
            "lung-like",
            fixture(870, 458, share([1., 230., 639.]), share([473., 397., 0.]), "C34.9"),
        ),
        (
            "prostate-like",
            fixture(1890, 515, share([0., 452., 1438.]), share([0., 1890., 0.]), "C61"),
        ),
    ]
}

pub fn fixture(name: &str) -> Result<GeneratorConfig> {
    cohort_fixtures()
        .into_iter()
        .find(|(n, _)| *n == name)
        .map(|(_, c)| c)
        .ok_or_else(|| {
            Error::Config(format!(
                "unknown fixture `{name}`; expected one of breast-like, colon-like, lung-like, prostate-like"
            ))
        })
}

const BASE_WORDS: &[&str] = &[
    "patient", "reports", "mild", "pain", "stable", "fatigue", "appetite", "reduced", "follow", "up",
    "scheduled", "blood", "pressure", "normal", "elevated", "chest", "abdomen", "clear", "unremarkable",
    "therapy", "continues", "tolerated", "well", "nausea", "cough", "breathing", "sleep", "improved",
    "worse", "discussed", "plan", "review", "next", "visit", "weight", "loss", "gain", "imaging",
    "ordered", "results", "pending", "labs", "drawn", "medication", "adjusted", "dose", "increased",
    "decreased", "wound", "healing", "examination", "performed", "no", "acute", "distress", "signs",
    "of", "infection", "fever", "absent", "present", "swelling", "mobility", "good", "family",
    "support", "oncology", "clinic", "nurse", "contact", "ward", "discharge", "home", "admitted",
    "observation", "the", "and", "with", "after", "before", "today", "noted", "again", "slightly",
];

const SYLLABLES: &[&str] = &[
    "ka", "lo", "ri", "ne", "sa", "to", "mi", "ve", "du", "po", "ra", "li", "se", "ko", "na", "fe",
    "gu", "ba", "ze", "ho",
];

const CONNECTIVES: &[&str] = &["the", "and", "with", "of", "after", "before", "today", "noted"];

/// Background comorbidity codes: non-neoplasm codes plus a few benign
/// neoplasm (D00–D48) codes that are kept at full detail.
const BACKGROUND_CODES: &[&str] = &[
    "I10.9", "I25.1", "I48.0", "E11.2", "E11.9", "E78.5", "J44.1", "J45.9", "K21.0", "K59.0",
    "M54.5", "M81.0", "N18.3", "N39.0", "F32.1", "G47.0", "R05.9", "R53.8", "Z51.1", "D12.6",
    "D25.1", "D50.0", "D64.9", "L40.0",
];

const MET_CODES: &[&str] = &["C77.0", "C77.2", "C78.0", "C78.7", "C79.5", "C79.9"];

const NEGATIVE_OUTCOME_CODES: &[&str] = &["Z08.9", "Z09.8", "Z51.8"];

const ATC_GROUPS: &[&str] = &[
    "A02B", "A10B", "B01A", "C03C", "C07A", "C09A", "C10A", "H02A", "J01C", "L01X", "L02B", "N02A",
    "N02B", "R03A",
];

/// The closed word list used by the note grammar (deterministic, seed free).
pub fn word_list(vocab_size: usize) -> Vec<String> {
    let mut words: Vec<String> = BASE_WORDS.iter().map(|w| w.to_string()).collect();
    let mut i = 0usize;
    while words.len() < vocab_size {
        let s = SYLLABLES.len();
        let w = format!(
            "{}{}{}",
            SYLLABLES[i % s],
            SYLLABLES[(i / s) % s],
            SYLLABLES[(i / (s * s) + i * 7) % s]
        );
        if !words.contains(&w) {
            words.push(w);
        }
        i += 1;
    }
    words.truncate(vocab_size.max(BASE_WORDS.len()));
    words
}

pub fn lab_channel_ids(n: usize) -> Vec<String> {
    (0..n).map(|c| format!("NPU{:05}", 1000 + 37 * c)).collect()
}

pub fn med_codes(n: usize) -> Vec<String> {
    (0..n)
        .map(|c| {
            let group = ATC_GROUPS[c % ATC_GROUPS.len()];
            format!("{group}{}{:02}", (b'A' + (c / ATC_GROUPS.len()) as u8) as char, 1 + c % 7)
        })
        .collect()
}

/// Channel baseline: (median, log-sd). Medians span roughly 1 to 100.
fn lab_baseline(c: usize) -> (f64, f64) {
    let median = 10f64.powf(((c * 7919) % 200) as f64 / 100.0);
    (median, 0.25)
}

fn med_rate(c: usize) -> f64 {
    0.2 + 0.6 * ((c * 2654435761) % 1000) as f64 / 1000.0
}

fn explicit_sentence(rng: &mut ChaCha8Rng) -> String {
    const FORMS: &[&str] = &[
        "Imaging shows metastasis with staging T2 N1.",
        "Suspected metastases discussed, staging T2 N1.",
        "Findings consistent with metastasis T2 N1 M1.",
    ];
    FORMS[rng.random_range(0..FORMS.len())].to_string()
}

struct Grammar {
    words: Vec<String>,
    /// Cumulative Zipf weights over `words`.
    cdf: Vec<f64>,
}

impl Grammar {
    fn new(vocab_size: usize) -> Self {
        let words = word_list(vocab_size);
        let mut acc = 0.0;
        let cdf = (0..words.len())
            .map(|r| {
                acc += 1.0 / (r as f64 + 2.0);
                acc
            })
            .collect();
        Self { words, cdf }
    }

    fn word(&self, rng: &mut ChaCha8Rng) -> &str {
        let total = *self.cdf.last().expect("non-empty word list");
        let u = rng.random::<f64>() * total;
        let i = self.cdf.partition_point(|c| *c < u).min(self.words.len() - 1);
        &self.words[i]
    }

    fn sentence(&self, rng: &mut ChaCha8Rng) -> String {
        let n = rng.random_range(4..=9);
        let mut parts: Vec<String> = Vec::with_capacity(n);
        for i in 0..n {
            let w = if i % 3 == 2 {
                CONNECTIVES[rng.random_range(0..CONNECTIVES.len())]
            } else {
                self.word(rng)
            };
            parts.push(w.to_string());
        }
        let mut s = parts.join(" ");
        if let Some(first) = s.get(0..1) {
            s.replace_range(0..1, &first.to_uppercase());
        }
        s.push('.');
        s
    }

    fn note(&self, rng: &mut ChaCha8Rng) -> String {
        let k = rng.random_range(2..=4);
        (0..k).map(|_| self.sentence(rng)).collect::<Vec<_>>().join(" ")
    }
}

fn pick_index(rng: &mut ChaCha8Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(0)
}

/// Inserts `sentence` at a random sentence boundary of `text`.
fn insert_sentence(text: &mut String, sentence: &str, rng: &mut ChaCha8Rng) {
    let bounds: Vec<usize> = std::iter::once(0)
        .chain(text.match_indices(". ").map(|(i, _)| i + 2))
        .chain(std::iter::once(text.len()))
        .collect();
    let at = bounds[rng.random_range(0..bounds.len())];
    let piece = if at == 0 {
        format!("{sentence} ")
    } else if at == text.len() {
        format!(" {sentence}")
    } else {
        format!("{sentence} ")
    };
    text.insert_str(at, &piece);
}

pub fn generate_cohort(config: &GeneratorConfig) -> Result<Vec<RawPatient>> {
    config.validate()?;
    let n = config.n_patients;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut positive = vec![false; n];
    for &i in &order[..config.n_positives()] {
        positive[i] = true;
    }
    let grammar = Grammar::new(config.vocab_size);
    let channels = lab_channel_ids(config.n_lab_channels);
    let meds = med_codes(config.n_med_channels);
    (0..n)
        .map(|i| {
            let mut prng = ChaCha8Rng::seed_from_u64(config.seed ^ (0x5bd1_e995u64.wrapping_mul(i as u64 + 1)));
            patient(config, i, positive[i], &grammar, &channels, &meds, &mut prng)
        })
        .collect()
}

fn patient(
    cfg: &GeneratorConfig,
    index: usize,
    positive: bool,
    grammar: &Grammar,
    channels: &[String],
    meds: &[String],
    rng: &mut ChaCha8Rng,
) -> Result<RawPatient> {
    let plan = &cfg.signal;
    let window = 1..=WINDOW_MONTHS;

    let gender = [Gender::Female, Gender::Male, Gender::Other][pick_index(rng, &cfg.demographics.genders)];
    let age = match pick_index(rng, &cfg.demographics.age_groups) {
        0 => rng.random_range(18..=24),
        1 => rng.random_range(25..=64),
        _ => rng.random_range(65..=90),
    };
    let birth_year = START_YEAR - age;

    // XOR flags: label = lab_flag XOR text_flag.
    let (lab_flag, text_flag) = match &cfg.xor {
        Some(_) => {
            let a = rng.random_bool(0.5);
            (a, a ^ positive)
        }
        None => (false, false),
    };

    let mut diagnosis_events = vec![DiagnosisEvent {
        month: 1,
        code: cfg.demographics.primary_code.clone(),
    }];
    let poisson = |lambda: f64| Poisson::new(lambda.max(1e-12)).map_err(|e| Error::Config(e.to_string()));
    let diag_dist = poisson(cfg.diagnoses_per_month)?;
    for month in window.clone() {
        let k = diag_dist.sample(rng) as usize;
        for _ in 0..k {
            let code = BACKGROUND_CODES[rng.random_range(0..BACKGROUND_CODES.len())];
            diagnosis_events.push(DiagnosisEvent {
                month,
                code: code.to_string(),
            });
        }
    }
    for eff in &plan.static_effect {
        let p0 = eff.base_prevalence;
        let p = if positive {
            let odds = eff.odds_ratio * p0 / (1.0 - p0).max(1e-12);
            odds / (1.0 + odds)
        } else {
            p0
        };
        if rng.random_bool(p.clamp(0.0, 1.0)) {
            diagnosis_events.push(DiagnosisEvent {
                month: rng.random_range(window.clone()),
                code: eff.code.clone(),
            });
        }
    }
    let outcome = if positive {
        MET_CODES[rng.random_range(0..MET_CODES.len())]
    } else {
        NEGATIVE_OUTCOME_CODES[rng.random_range(0..NEGATIVE_OUTCOME_CODES.len())]
    };
    diagnosis_events.push(DiagnosisEvent {
        month: OUTCOME_MONTH,
        code: outcome.to_string(),
    });

    let std_normal = Normal::new(0.0, 1.0).expect("valid normal");
    let mut lab_events = Vec::new();
    for (c, id) in channels.iter().enumerate() {
        let (median, sd) = lab_baseline(c);
        for month in 1..=cfg.months {
            if !rng.random_bool(cfg.lab_observation_prob) {
                continue;
            }
            let reps = rng.random_range(1..=2);
            for _ in 0..reps {
                let mut v = median * (sd * std_normal.sample(rng)).exp();
                if positive && month <= WINDOW_MONTHS {
                    let eff = plan.lab_effect.get(c).copied().unwrap_or(0.0);
                    if plan.lab_effect_months.contains(&month) {
                        v += eff * median;
                    } else if plan.lab_compensate && month <= 3 {
                        v -= eff * median;
                    }
                }
                if let Some(x) = &cfg.xor {
                    if lab_flag && x.lab_channel == c && month <= WINDOW_MONTHS {
                        v += x.lab_shift * median;
                    }
                }
                lab_events.push(LabEvent {
                    month,
                    channel: id.clone(),
                    value: v.max(1e-3 * median),
                });
            }
        }
    }

    let mut med_events = Vec::new();
    for (c, code) in meds.iter().enumerate() {
        let mult = if positive {
            plan.med_effect.get(c).copied().unwrap_or(1.0)
        } else {
            1.0
        };
        for month in 1..=cfg.months {
            let lambda = med_rate(c) * if month <= WINDOW_MONTHS { mult } else { 1.0 };
            let k = poisson(lambda)?.sample(rng) as usize;
            for _ in 0..k {
                med_events.push(MedEvent {
                    month,
                    code: code.clone(),
                });
            }
        }
    }

    let [lo, hi] = cfg.notes_per_patient_range;
    let n_notes = rng.random_range(lo..=hi);
    let mut months: Vec<u8> = (0..n_notes).map(|_| rng.random_range(1..=cfg.months)).collect();
    // the window must contain at least one note so every modality exists
    if !months.iter().any(|m| *m <= WINDOW_MONTHS) {
        months[0] = rng.random_range(window.clone());
    }
    months.sort_unstable();
    let mut notes: Vec<Note> = Vec::with_capacity(n_notes);
    for m in months {
        let order = notes.iter().filter(|n| n.month == m).count() as u32;
        notes.push(Note {
            month: m,
            order,
            text: grammar.note(rng),
        });
    }
    let in_window: Vec<usize> = (0..notes.len()).filter(|i| notes[*i].month <= WINDOW_MONTHS).collect();
    if positive {
        for eff in &plan.text_effect {
            if rng.random_bool(eff.prob) {
                let target = in_window[rng.random_range(0..in_window.len())];
                let s = format!("Findings {} again noted.", eff.token);
                insert_sentence(&mut notes[target].text, &s, rng);
            }
        }
        if rng.random_bool(plan.explicit_metastasis_token_prob) {
            let target = in_window[rng.random_range(0..in_window.len())];
            let s = explicit_sentence(rng);
            insert_sentence(&mut notes[target].text, &s, rng);
        }
    }
    if let Some(x) = &cfg.xor {
        if text_flag {
            // the most recent in-window note survives any truncation
            let target = *in_window.last().expect("window has a note");
            notes[target].text.push_str(&format!(" Findings {} again noted.", x.text_token));
        }
    }

    // month-1 and month-7 presence holds by construction (primary and
    // outcome codes); checked here so a config change cannot silently break it
    let p = RawPatient {
        patient_id: format!("P{index:06}"),
        gender,
        birth_year,
        diagnosis_events,
        lab_events,
        med_events,
        notes,
        label: if positive { Label::Positive } else { Label::Negative },
    };
    debug_assert!(p.has_event_in(1) && p.has_event_in(OUTCOME_MONTH));
    Ok(p)
}

pub fn write_jsonl<W: Write>(patients: &[RawPatient], mut out: W) -> Result<()> {
    for p in patients {
        serde_json::to_writer(&mut out, p)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl<R: BufRead>(input: R) -> Result<Vec<RawPatient>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let p = serde_json::from_str(&line)
            .map_err(|e| Error::Encoding(format!("cohort line {}: {e}", i + 1)))?;
        out.push(p);
    }
    Ok(out)
}
