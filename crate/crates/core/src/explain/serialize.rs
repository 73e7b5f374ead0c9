//! Flattening of a multimodal sample into one `f64` sequence with
//! sentinels: `+∞` between modalities, `-∞` between months (labs, meds) and
//! between notes (text).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::Modality;
use crate::preprocess::{MultimodalSample, MONTHS};

/// Coordinates of one serialized feature. For labs and meds `channel` is the
/// lab channel or med group and `index` the month; for text `channel` is the
/// note and `index` the token position within it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureRef {
    pub modality: Modality,
    pub channel: usize,
    pub index: usize,
}

/// Segment sizes needed to cut the flat sequence back apart.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub n_static: usize,
    pub lab_channels: usize,
    pub lab_months: usize,
    pub med_groups: usize,
    pub med_months: usize,
    pub note_lens: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SerializedSample {
    pub values: Vec<f64>,
    pub layout: Layout,
}

/// The modality payload of a sample, without identifiers or label.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleParts {
    pub statics: Vec<f64>,
    pub labs: Vec<f64>,
    pub meds: Vec<f64>,
    pub notes: Vec<Vec<u32>>,
}

impl SampleParts {
    pub fn of(s: &MultimodalSample) -> Self {
        Self {
            statics: s.statics.clone(),
            labs: s.labs.clone(),
            meds: s.meds.clone(),
            notes: s.notes.clone(),
        }
    }

    /// `template` with its modalities replaced by these parts.
    pub fn into_sample(self, template: &MultimodalSample) -> MultimodalSample {
        MultimodalSample {
            statics: self.statics,
            labs: self.labs,
            meds: self.meds,
            notes: self.notes,
            ..template.clone()
        }
    }
}

fn check_finite(values: &[f64], what: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Explain(format!("non-finite {what} value collides with the sentinels")))
    }
}

/// Serializes with both series spanning [`MONTHS`] months.
pub fn serialize(s: &MultimodalSample) -> Result<SerializedSample> {
    serialize_with(&SampleParts::of(s), MONTHS, MONTHS)
}

pub fn serialize_with(p: &SampleParts, lab_months: usize, med_months: usize) -> Result<SerializedSample> {
    check_finite(&p.statics, "static")?;
    check_finite(&p.labs, "lab")?;
    check_finite(&p.meds, "medication")?;
    if lab_months == 0 || med_months == 0 || p.labs.len() % lab_months != 0 || p.meds.len() % med_months != 0 {
        return Err(Error::Explain("series length is not a whole number of months".into()));
    }
    let layout = Layout {
        n_static: p.statics.len(),
        lab_channels: p.labs.len() / lab_months,
        lab_months,
        med_groups: p.meds.len() / med_months,
        med_months,
        note_lens: p.notes.iter().map(Vec::len).collect(),
    };
    let mut v = p.statics.clone();
    v.push(f64::INFINITY);
    push_series(&mut v, &p.labs, layout.lab_channels, lab_months);
    v.push(f64::INFINITY);
    push_series(&mut v, &p.meds, layout.med_groups, med_months);
    v.push(f64::INFINITY);
    for (i, note) in p.notes.iter().enumerate() {
        if i > 0 {
            v.push(f64::NEG_INFINITY);
        }
        v.extend(note.iter().map(|t| *t as f64));
    }
    Ok(SerializedSample { values: v, layout })
}

/// Month-major: all channels of month 0, `-∞`, all channels of month 1, …
fn push_series(out: &mut Vec<f64>, data: &[f64], channels: usize, months: usize) {
    for t in 0..months {
        if t > 0 {
            out.push(f64::NEG_INFINITY);
        }
        out.extend((0..channels).map(|c| data[c * months + t]));
    }
}

impl Layout {
    /// Feature coordinates in serialized order, sentinels skipped.
    pub fn features(&self) -> Vec<FeatureRef> {
        let mut out: Vec<FeatureRef> = (0..self.n_static)
            .map(|i| FeatureRef {
                modality: Modality::Static,
                channel: i,
                index: 0,
            })
            .collect();
        for (modality, channels, months) in [
            (Modality::Labs, self.lab_channels, self.lab_months),
            (Modality::Meds, self.med_groups, self.med_months),
        ] {
            for t in 0..months {
                out.extend((0..channels).map(|c| FeatureRef {
                    modality,
                    channel: c,
                    index: t,
                }));
            }
        }
        for (n, len) in self.note_lens.iter().enumerate() {
            out.extend((0..*len).map(|k| FeatureRef {
                modality: Modality::Text,
                channel: n,
                index: k,
            }));
        }
        out
    }

    /// Positions of features inside the serialized vector.
    pub fn feature_positions(&self) -> Vec<usize> {
        let mut out = Vec::new();
        let mut pos = 0;
        let seg = |out: &mut Vec<usize>, pos: &mut usize, lens: &[usize]| {
            for (i, len) in lens.iter().enumerate() {
                if i > 0 {
                    *pos += 1;
                }
                out.extend(*pos..*pos + len);
                *pos += len;
            }
        };
        seg(&mut out, &mut pos, &[self.n_static]);
        pos += 1;
        seg(&mut out, &mut pos, &vec![self.lab_channels; self.lab_months]);
        pos += 1;
        seg(&mut out, &mut pos, &vec![self.med_groups; self.med_months]);
        pos += 1;
        seg(&mut out, &mut pos, &self.note_lens);
        out
    }

    pub fn len(&self) -> usize {
        let notes: usize = self.note_lens.iter().sum::<usize>() + self.note_lens.len().saturating_sub(1);
        self.n_static
            + self.lab_channels * self.lab_months
            + self.lab_months.saturating_sub(1)
            + self.med_groups * self.med_months
            + self.med_months.saturating_sub(1)
            + notes
            + 3
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

fn expect(v: &[f64], pos: usize, want: f64) -> Result<()> {
    if v.get(pos) == Some(&want) {
        Ok(())
    } else {
        Err(Error::Explain(format!("expected sentinel {want} at position {pos}")))
    }
}

fn read_series(v: &[f64], pos: &mut usize, channels: usize, months: usize) -> Result<Vec<f64>> {
    let mut data = vec![0.0; channels * months];
    for t in 0..months {
        if t > 0 {
            expect(v, *pos, f64::NEG_INFINITY)?;
            *pos += 1;
        }
        for c in 0..channels {
            data[c * months + t] = v[*pos];
            *pos += 1;
        }
    }
    Ok(data)
}

pub fn deserialize(s: &SerializedSample) -> Result<SampleParts> {
    let l = &s.layout;
    let v = &s.values;
    if v.len() != l.len() {
        return Err(Error::Explain(format!("layout expects {} values, got {}", l.len(), v.len())));
    }
    let mut pos = l.n_static;
    let statics = v[..pos].to_vec();
    expect(v, pos, f64::INFINITY)?;
    pos += 1;
    let labs = read_series(v, &mut pos, l.lab_channels, l.lab_months)?;
    expect(v, pos, f64::INFINITY)?;
    pos += 1;
    let meds = read_series(v, &mut pos, l.med_groups, l.med_months)?;
    expect(v, pos, f64::INFINITY)?;
    pos += 1;
    let mut notes = Vec::with_capacity(l.note_lens.len());
    for (i, len) in l.note_lens.iter().enumerate() {
        if i > 0 {
            expect(v, pos, f64::NEG_INFINITY)?;
            pos += 1;
        }
        let ids = v[pos..pos + len]
            .iter()
            .map(|x| {
                if x.fract() == 0.0 && *x >= 0.0 && *x <= u32::MAX as f64 {
                    Ok(*x as u32)
                } else {
                    Err(Error::Explain(format!("{x} is not a token id")))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        notes.push(ids);
        pos += len;
    }
    Ok(SampleParts {
        statics,
        labs,
        meds,
        notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const INF: f64 = f64::INFINITY;
    const NINF: f64 = f64::NEG_INFINITY;

    #[test]
    fn toy_layout_by_hand() {
        let p = SampleParts {
            statics: vec![1.0, 0.0],
            labs: vec![5.0, -1.0],
            meds: vec![2.0],
            notes: vec![vec![7], vec![9]],
        };
        let s = serialize_with(&p, 2, 1).unwrap();
        assert_eq!(s.values, vec![1.0, 0.0, INF, 5.0, NINF, -1.0, INF, 2.0, INF, 7.0, NINF, 9.0]);
        assert_eq!(s.layout.feature_positions(), vec![0, 1, 3, 5, 7, 9, 11]);
        assert_eq!(deserialize(&s).unwrap(), p);
    }

    #[test]
    fn empty_text_is_still_delimited() {
        let p = SampleParts {
            statics: vec![1.0],
            labs: vec![3.0],
            meds: vec![0.0],
            notes: vec![],
        };
        let s = serialize_with(&p, 1, 1).unwrap();
        assert_eq!(s.values, vec![1.0, INF, 3.0, INF, 0.0, INF]);
        assert!(s.layout.features().iter().all(|f| f.modality != Modality::Text));
        assert_eq!(deserialize(&s).unwrap(), p);
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let p = SampleParts {
            statics: vec![f64::NAN],
            labs: vec![],
            meds: vec![],
            notes: vec![],
        };
        assert!(serialize_with(&p, 1, 1).is_err());
    }

    #[test]
    fn random_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            let ch = rng.random_range(0..4);
            let gr = rng.random_range(0..4);
            let p = SampleParts {
                statics: (0..rng.random_range(0..5)).map(|_| rng.random::<f64>()).collect(),
                labs: (0..ch * MONTHS).map(|_| rng.random_range(-1.0..1e6)).collect(),
                meds: (0..gr * MONTHS).map(|_| rng.random_range(0..5) as f64).collect(),
                notes: (0..rng.random_range(0..4))
                    .map(|_| (0..rng.random_range(0..6)).map(|_| rng.random::<u32>()).collect())
                    .collect(),
            };
            let s = serialize_with(&p, MONTHS, MONTHS).unwrap();
            assert_eq!(s.values.len(), s.layout.len());
            let positions = s.layout.feature_positions();
            assert_eq!(positions.len(), s.layout.features().len());
            assert!(positions.iter().all(|i| s.values[*i].is_finite()));
            let sentinels = s.values.iter().filter(|v| v.is_infinite()).count();
            assert_eq!(sentinels + positions.len(), s.values.len());
            assert_eq!(deserialize(&s).unwrap(), p);
        }
    }
}
