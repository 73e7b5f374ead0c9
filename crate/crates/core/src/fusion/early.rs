//! Early fusion: statics concatenated with time-averaged labs and meds.
//! Text is left out.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::encode::{MISSING_LAB, MONTHS};
use crate::preprocess::{MultimodalSample, Vocabularies};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MedAggregate {
    Mean,
    Sum,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EarlyConfig {
    /// Average labs over observed months only; otherwise `-1` cells count.
    pub skip_missing: bool,
    pub meds: MedAggregate,
}

impl Default for EarlyConfig {
    fn default() -> Self {
        Self {
            skip_missing: true,
            meds: MedAggregate::Mean,
        }
    }
}

fn lab_mean(cells: &[f64], skip_missing: bool) -> f64 {
    if !skip_missing {
        return cells.iter().sum::<f64>() / cells.len() as f64;
    }
    let seen: Vec<f64> = cells.iter().copied().filter(|v| *v != MISSING_LAB).collect();
    if seen.is_empty() {
        MISSING_LAB
    } else {
        seen.iter().sum::<f64>() / seen.len() as f64
    }
}

/// Row-major `[n × (statics + lab channels + med groups)]` and its width.
pub fn early_fuse(samples: &[MultimodalSample], cfg: &EarlyConfig) -> Result<(Vec<f64>, usize)> {
    let Some(first) = samples.first() else {
        return Ok((Vec::new(), 0));
    };
    let (s, l, m) = (first.statics.len(), first.labs.len(), first.meds.len());
    if l % MONTHS != 0 || m % MONTHS != 0 {
        return Err(Error::Encoding("series width is not a whole number of months".into()));
    }
    let cols = s + l / MONTHS + m / MONTHS;
    let mut out = Vec::with_capacity(samples.len() * cols);
    for p in samples {
        if p.statics.len() != s || p.labs.len() != l || p.meds.len() != m {
            return Err(Error::Encoding(format!("sample {} has a different layout", p.patient_id)));
        }
        out.extend_from_slice(&p.statics);
        out.extend(p.labs.chunks(MONTHS).map(|c| lab_mean(c, cfg.skip_missing)));
        out.extend(p.meds.chunks(MONTHS).map(|c| {
            let total: f64 = c.iter().sum();
            match cfg.meds {
                MedAggregate::Mean => total / MONTHS as f64,
                MedAggregate::Sum => total,
            }
        }));
    }
    Ok((out, cols))
}

/// Column names matching [`early_fuse`].
pub fn early_feature_names(v: &Vocabularies) -> Vec<String> {
    let mut names = v.static_names.clone();
    names.extend(v.lab_channels.iter().map(|c| format!("lab:{c}")));
    names.extend(v.med_groups.iter().map(|c| format!("med:{c}")));
    names
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(labs: Vec<f64>, meds: Vec<f64>) -> MultimodalSample {
        MultimodalSample {
            patient_id: "p".into(),
            statics: vec![1.0, 0.0],
            labs,
            meds,
            notes: vec![],
            note_months: vec![],
            label: 0,
        }
    }

    #[test]
    fn hand_averages() {
        let mut labs = vec![-1.0, 6.0, -1.0, -1.0, -1.0, -1.0];
        labs.extend([-1.0; 6]);
        let p = sample(labs, vec![3.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let (x, cols) = early_fuse(&[p.clone()], &EarlyConfig::default()).unwrap();
        assert_eq!(cols, 5);
        assert_eq!(x, vec![1.0, 0.0, 6.0, -1.0, 0.5]);
        let raw = EarlyConfig {
            skip_missing: false,
            meds: MedAggregate::Sum,
        };
        let (x, _) = early_fuse(&[p], &raw).unwrap();
        assert_eq!(x, vec![1.0, 0.0, 1.0 / 6.0, -1.0, 3.0]);
    }

    #[test]
    fn ragged_samples_are_rejected() {
        let a = sample(vec![0.0; 6], vec![0.0; 6]);
        let b = sample(vec![0.0; 12], vec![0.0; 6]);
        assert!(early_fuse(&[a, b], &EarlyConfig::default()).is_err());
    }
}
