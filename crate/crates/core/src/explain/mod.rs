//! Shapley attributions over serialized multimodal samples, modality
//! relevance and perturbation faithfulness.

pub mod faithfulness;
pub mod relevance;
pub mod serialize;
pub mod shapley;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::Modality;
use crate::preprocess::tokenizer::PAD;
use crate::preprocess::MultimodalSample;

pub use faithfulness::{perturbation_curve, FaithfulnessCurve, Strategy};
pub use relevance::{modality_relevance, top_percentile_local, ModalityRelevance};
pub use serialize::{deserialize, serialize, FeatureRef, Layout, SampleParts, SerializedSample};
pub use shapley::{default_coalitions, exact_shapley, kernel_shap, Attribution, Game};

/// Batched model output for whole samples.
pub type Predictor<'a> = dyn Fn(&[MultimodalSample]) -> Result<Vec<f64>> + 'a;

/// Value substituted for a masked feature, per modality.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Imputation {
    pub statics: f64,
    pub labs: f64,
    pub meds: f64,
    pub text: u32,
}

impl Default for Imputation {
    fn default() -> Self {
        Self {
            statics: 0.0,
            labs: -1.0,
            meds: 0.0,
            text: PAD,
        }
    }
}

impl Imputation {
    pub fn symbol(&self, m: Modality) -> f64 {
        match m {
            Modality::Static => self.statics,
            Modality::Labs => self.labs,
            Modality::Meds => self.meds,
            Modality::Text => self.text as f64,
            Modality::Early => 0.0,
        }
    }
}

/// How serialized features are grouped into Shapley players.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    /// Every static entry, monthly cell and token position is a player.
    Feature,
    /// One player per modality.
    Modality,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainConfig {
    pub granularity: Granularity,
    /// Coalition budget; `None` means `min(2^M, 2048)`.
    pub coalitions: Option<usize>,
    pub imputation: Imputation,
    pub seed: u64,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        Self {
            granularity: Granularity::Feature,
            coalitions: None,
            imputation: Imputation::default(),
            seed: 0,
        }
    }
}

/// One sample with its masking machinery.
pub struct SampleGame<'a> {
    pub sample: &'a MultimodalSample,
    pub serialized: SerializedSample,
    pub features: Vec<FeatureRef>,
    pub positions: Vec<usize>,
    /// Feature indices owned by each player.
    pub groups: Vec<Vec<usize>>,
    pub imputation: Imputation,
    pub predict: &'a Predictor<'a>,
}

impl<'a> SampleGame<'a> {
    pub fn new(
        sample: &'a MultimodalSample,
        granularity: Granularity,
        imputation: Imputation,
        predict: &'a Predictor<'a>,
    ) -> Result<Self> {
        let serialized = serialize(sample)?;
        let features = serialized.layout.features();
        let positions = serialized.layout.feature_positions();
        let groups = match granularity {
            Granularity::Feature => (0..features.len()).map(|i| vec![i]).collect(),
            Granularity::Modality => Modality::UNIMODAL
                .iter()
                .map(|m| (0..features.len()).filter(|i| features[*i].modality == *m).collect())
                .collect(),
        };
        Ok(Self {
            sample,
            serialized,
            features,
            positions,
            groups,
            imputation,
            predict,
        })
    }

    /// The sample with every feature whose `keep` flag is false imputed.
    pub fn masked(&self, keep: &[bool]) -> Result<MultimodalSample> {
        let mut s = self.serialized.clone();
        for (i, k) in keep.iter().enumerate() {
            if !k {
                s.values[self.positions[i]] = self.imputation.symbol(self.features[i].modality);
            }
        }
        Ok(deserialize(&s)?.into_sample(self.sample))
    }

    fn feature_mask(&self, coalition: &[bool]) -> Vec<bool> {
        let mut keep = vec![false; self.features.len()];
        for (g, on) in self.groups.iter().zip(coalition) {
            if *on {
                g.iter().for_each(|i| keep[*i] = true);
            }
        }
        keep
    }
}

impl Game for SampleGame<'_> {
    fn players(&self) -> usize {
        self.groups.len()
    }

    fn values(&self, coalitions: &[Vec<bool>]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(coalitions.len());
        for chunk in coalitions.chunks(256) {
            let batch = chunk
                .iter()
                .map(|z| self.masked(&self.feature_mask(z)))
                .collect::<Result<Vec<_>>>()?;
            out.extend((self.predict)(&batch)?);
        }
        if out.len() != coalitions.len() {
            return Err(Error::Explain("predictor returned the wrong number of outputs".into()));
        }
        Ok(out)
    }
}

/// Per-player attributions for one sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleExplanation {
    pub patient_id: String,
    pub granularity: Granularity,
    /// Features per player, in serialized order.
    pub features: Vec<FeatureRef>,
    pub attribution: Attribution,
}

/// KernelSHAP attributions (exact when the budget covers every coalition).
pub fn explain_sample(sample: &MultimodalSample, predict: &Predictor<'_>, cfg: &ExplainConfig) -> Result<SampleExplanation> {
    let game = SampleGame::new(sample, cfg.granularity, cfg.imputation.clone(), predict)?;
    let m = game.players();
    let budget = cfg.coalitions.unwrap_or_else(|| default_coalitions(m)).max(m + 2);
    let attribution = kernel_shap(&game, budget, cfg.seed)?;
    Ok(SampleExplanation {
        patient_id: sample.patient_id.clone(),
        granularity: cfg.granularity,
        features: game.features.clone(),
        attribution,
    })
}

/// Modality of each player in an explanation.
pub fn player_modalities(e: &SampleExplanation) -> Vec<Modality> {
    match e.granularity {
        Granularity::Feature => e.features.iter().map(|f| f.modality).collect(),
        Granularity::Modality => Modality::UNIMODAL.to_vec(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> MultimodalSample {
        MultimodalSample {
            patient_id: "p1".into(),
            statics: vec![1.0, 0.0],
            labs: (0..12).map(|i| i as f64).collect(),
            meds: vec![1.0; 6],
            notes: vec![vec![5, 6], vec![7]],
            note_months: vec![1, 2],
            label: 1,
        }
    }

    #[test]
    fn masking_uses_modality_symbols() {
        let s = sample();
        let f = |_: &[MultimodalSample]| -> Result<Vec<f64>> { Ok(vec![]) };
        let g = SampleGame::new(&s, Granularity::Feature, Imputation::default(), &f).unwrap();
        assert_eq!(g.features.len(), 2 + 12 + 6 + 3);
        let m = g.masked(&vec![false; g.features.len()]).unwrap();
        assert_eq!(m.statics, vec![0.0, 0.0]);
        assert!(m.labs.iter().all(|v| *v == -1.0));
        assert!(m.meds.iter().all(|v| *v == 0.0));
        assert_eq!(m.notes, vec![vec![PAD, PAD], vec![PAD]]);
        assert!(m.token_stream(10).iter().all(|t| *t != 5));
        assert_eq!(m.patient_id, "p1");
        let full = g.masked(&vec![true; g.features.len()]).unwrap();
        assert_eq!(full, s);
    }

    #[test]
    fn efficiency_on_a_sample_model() {
        let s = sample();
        // depends on the first static entry, the month-6 lab of channel 1 and token 7
        let f = |xs: &[MultimodalSample]| -> Result<Vec<f64>> {
            Ok(xs
                .iter()
                .map(|x| {
                    let t = x.token_stream(16).contains(&7) as u8 as f64;
                    0.1 * x.statics[0] + 0.02 * x.labs[11] + 0.3 * t * x.statics[0]
                })
                .collect())
        };
        let cfg = ExplainConfig {
            granularity: Granularity::Modality,
            ..Default::default()
        };
        let e = explain_sample(&s, &f, &cfg).unwrap();
        assert!(e.attribution.efficiency_gap().abs() < 1e-12);
        // meds do not matter
        assert!(e.attribution.phi[2].abs() < 1e-12);
        let exact = exact_shapley(&SampleGame::new(&s, Granularity::Modality, Imputation::default(), &f).unwrap()).unwrap();
        for (a, b) in exact.phi.iter().zip(&e.attribution.phi) {
            assert!((a - b).abs() < 1e-10);
        }
    }
}
