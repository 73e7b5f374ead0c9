//! Cohort vocabularies and per-patient encoding into the four modalities.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::censor::Censor;
use super::icd::{age_one_hot, aggregate_icd10, encode_age, AgeGroup};
use super::tokenizer::{WordPiece, PAD, SEP};
use crate::error::{Error, Result};
use crate::synthgen::{Gender, Label, RawPatient, START_YEAR, WINDOW_MONTHS};

pub const UNKNOWN: &str = "<unk>";
pub const MONTHS: usize = WINDOW_MONTHS as usize;
pub const MISSING_LAB: f64 = -1.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    /// ATC prefix length used as the medication group (4 = pharmacological subgroup).
    pub atc_prefix_len: usize,
    pub max_notes: usize,
    /// Token cap on the concatenated note stream; the most recent tokens are kept.
    pub max_len: usize,
    pub token_vocab_size: usize,
    pub window_start_year: i32,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            atc_prefix_len: 4,
            max_notes: 20,
            max_len: 512,
            token_vocab_size: 512,
            window_start_year: START_YEAR,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=7).contains(&self.atc_prefix_len) {
            return Err(Error::Config(format!("atc_prefix_len {} not in 1..=7", self.atc_prefix_len)));
        }
        if self.max_notes == 0 || self.max_len == 0 {
            return Err(Error::Config("max_notes and max_len must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// Feature vocabularies fitted on the development set only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vocabularies {
    pub config: PreprocessConfig,
    /// Lexicographically sorted static feature names.
    pub static_names: Vec<String>,
    /// Lab channel ids observed in the development window, sorted, then `<unk>`.
    pub lab_channels: Vec<String>,
    /// Medication groups, sorted, then `<unk>`.
    pub med_groups: Vec<String>,
    pub tokenizer: WordPiece,
}

/// One patient's encoded modalities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultimodalSample {
    pub patient_id: String,
    /// Binary indicators aligned with `Vocabularies::static_names`.
    pub statics: Vec<f64>,
    /// `[lab channel × month]`, row-major; `-1` where unobserved.
    pub labs: Vec<f64>,
    /// `[med group × month]` counts, row-major.
    pub meds: Vec<f64>,
    /// Token ids per selected note, oldest first.
    pub notes: Vec<Vec<u32>>,
    pub note_months: Vec<u8>,
    pub label: u8,
}

impl MultimodalSample {
    /// Notes joined oldest to newest with `[SEP]` between notes, keeping the
    /// last `max_len` tokens.
    pub fn token_stream(&self, max_len: usize) -> Vec<u32> {
        let mut s = Vec::new();
        for (i, n) in self.notes.iter().enumerate() {
            if i > 0 {
                s.push(SEP);
            }
            s.extend(n.iter().copied().filter(|t| *t != PAD));
        }
        if s.len() > max_len {
            s.drain(..s.len() - max_len);
        }
        s
    }
}

fn gender_name(g: Gender) -> &'static str {
    match g {
        Gender::Female => "female",
        Gender::Male => "male",
        Gender::Other => "other",
    }
}

fn in_window(month: u8) -> bool {
    (1..=WINDOW_MONTHS).contains(&month)
}

fn med_group(code: &str, len: usize) -> String {
    code.chars().take(len).collect()
}

/// The in-window notes in chronological order, capped to the most recent
/// `max_notes`.
fn selected_notes(p: &RawPatient, max_notes: usize) -> Vec<(u8, &str)> {
    let mut notes: Vec<_> = p.notes.iter().filter(|n| in_window(n.month)).collect();
    notes.sort_by_key(|n| (n.month, n.order));
    let skip = notes.len().saturating_sub(max_notes);
    notes[skip..].iter().map(|n| (n.month, n.text.as_str())).collect()
}

impl Vocabularies {
    pub fn fit(dev: &[RawPatient], config: PreprocessConfig) -> Result<Self> {
        config.validate()?;
        if dev.is_empty() {
            return Err(Error::Encoding("cannot fit vocabularies on an empty development set".into()));
        }
        let mut static_names: BTreeSet<String> = BTreeSet::new();
        for g in ["female", "male", "other"] {
            static_names.insert(format!("gender={g}"));
        }
        for a in AgeGroup::ALL {
            static_names.insert(format!("age={}", a.name()));
        }
        static_names.insert(format!("dx={UNKNOWN}"));
        let mut labs = BTreeSet::new();
        let mut meds = BTreeSet::new();
        for p in dev {
            for d in p.diagnosis_events.iter().filter(|d| in_window(d.month)) {
                static_names.insert(format!("dx={}", aggregate_icd10(&d.code)?));
            }
            for l in p.lab_events.iter().filter(|l| in_window(l.month)) {
                labs.insert(l.channel.clone());
            }
            for m in p.med_events.iter().filter(|m| in_window(m.month)) {
                meds.insert(med_group(&m.code, config.atc_prefix_len));
            }
        }
        let corpus: Vec<&str> = dev
            .iter()
            .flat_map(|p| selected_notes(p, config.max_notes).into_iter().map(|(_, t)| t))
            .collect();
        let tokenizer = WordPiece::train(corpus, config.token_vocab_size)?;
        let with_unknown = |set: BTreeSet<String>| {
            let mut v: Vec<String> = set.into_iter().collect();
            v.push(UNKNOWN.to_string());
            v
        };
        Ok(Self {
            config,
            static_names: static_names.into_iter().collect(),
            lab_channels: with_unknown(labs),
            med_groups: with_unknown(meds),
            tokenizer,
        })
    }

    pub fn n_static(&self) -> usize {
        self.static_names.len()
    }

    pub fn n_labs(&self) -> usize {
        self.lab_channels.len()
    }

    pub fn n_meds(&self) -> usize {
        self.med_groups.len()
    }

    /// SHA-256 over the canonical JSON of the vocabularies.
    pub fn schema_hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("vocabularies serialise");
        hex::encode(Sha256::digest(&json))
    }

    pub fn encode(&self, p: &RawPatient) -> Result<MultimodalSample> {
        self.encode_with(p, None)
    }

    /// Encodes one patient; month-7 events never reach a feature. With a
    /// censor, matching sentences are removed before tokenisation.
    pub fn encode_with(&self, p: &RawPatient, censor: Option<&Censor>) -> Result<MultimodalSample> {
        let index = |names: &[String]| -> BTreeMap<String, usize> {
            names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect()
        };
        let static_ix = index(&self.static_names);
        let mut statics = vec![0.0; self.static_names.len()];
        statics[static_ix[&format!("gender={}", gender_name(p.gender))]] = 1.0;
        let group = encode_age(p.birth_year, self.config.window_start_year)?;
        statics[static_ix[&format!("age={}", group.name())]] = age_one_hot(group)[group as usize];
        for d in p.diagnosis_events.iter().filter(|d| in_window(d.month)) {
            let key = format!("dx={}", aggregate_icd10(&d.code)?);
            let i = static_ix
                .get(&key)
                .copied()
                .unwrap_or_else(|| static_ix[&format!("dx={UNKNOWN}")]);
            statics[i] = 1.0;
        }

        let lab_ix = index(&self.lab_channels);
        let unk_lab = self.lab_channels.len() - 1;
        let mut sums = vec![0.0; self.lab_channels.len() * MONTHS];
        let mut counts = vec![0usize; self.lab_channels.len() * MONTHS];
        for l in p.lab_events.iter().filter(|l| in_window(l.month)) {
            if !l.value.is_finite() {
                return Err(Error::Encoding(format!(
                    "patient {}: non-finite lab value for {}",
                    p.patient_id, l.channel
                )));
            }
            let c = lab_ix.get(&l.channel).copied().unwrap_or(unk_lab);
            let cell = c * MONTHS + (l.month as usize - 1);
            sums[cell] += l.value;
            counts[cell] += 1;
        }
        let labs = sums
            .iter()
            .zip(&counts)
            .map(|(s, n)| if *n == 0 { MISSING_LAB } else { s / *n as f64 })
            .collect();

        let med_ix = index(&self.med_groups);
        let unk_med = self.med_groups.len() - 1;
        let mut meds = vec![0.0; self.med_groups.len() * MONTHS];
        for m in p.med_events.iter().filter(|m| in_window(m.month)) {
            let g = med_group(&m.code, self.config.atc_prefix_len);
            let c = med_ix.get(&g).copied().unwrap_or(unk_med);
            meds[c * MONTHS + (m.month as usize - 1)] += 1.0;
        }

        let mut notes = Vec::new();
        let mut note_months = Vec::new();
        for (month, text) in selected_notes(p, self.config.max_notes) {
            let ids = match censor {
                Some(c) => self.tokenizer.encode(&c.apply(text)),
                None => self.tokenizer.encode(text),
            };
            notes.push(ids);
            note_months.push(month);
        }

        Ok(MultimodalSample {
            patient_id: p.patient_id.clone(),
            statics,
            labs,
            meds,
            notes,
            note_months,
            label: match p.label {
                Label::Positive => 1,
                Label::Negative => 0,
            },
        })
    }
}
