//! Aggregation of attributions into modality shares and top features.

use log::warn;
use serde::{Deserialize, Serialize};

use super::{player_modalities, SampleExplanation};
use crate::error::{Error, Result};
use crate::models::Modality;

/// Shares of absolute attribution mass per modality, in
/// [`Modality::UNIMODAL`] order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModalityRelevance {
    pub patients: Vec<(String, [f64; 4])>,
    pub global: [f64; 4],
}

fn slot(m: Modality) -> Option<usize> {
    Modality::UNIMODAL.iter().position(|u| *u == m)
}

/// `Σ|φ|` per modality over the total; uniform when everything is zero.
pub fn shares(phi: &[f64], modalities: &[Modality]) -> Result<[f64; 4]> {
    if phi.len() != modalities.len() {
        return Err(Error::Explain(format!(
            "{} attributions for {} positions",
            phi.len(),
            modalities.len()
        )));
    }
    let mut mass = [0.0; 4];
    for (p, m) in phi.iter().zip(modalities) {
        let k = slot(*m).ok_or_else(|| Error::Explain(format!("{} is not a unimodal input", m.name())))?;
        mass[k] += p.abs();
    }
    let total: f64 = mass.iter().sum();
    if total == 0.0 {
        warn!("all-zero attribution vector; reporting uniform modality shares");
        return Ok([0.25; 4]);
    }
    Ok(mass.map(|v| v / total))
}

pub fn modality_relevance(explanations: &[SampleExplanation]) -> Result<ModalityRelevance> {
    let mut patients = Vec::with_capacity(explanations.len());
    let mut global = [0.0; 4];
    for e in explanations {
        let s = shares(&e.attribution.phi, &player_modalities(e))?;
        for k in 0..4 {
            global[k] += s[k] / explanations.len() as f64;
        }
        patients.push((e.patient_id.clone(), s));
    }
    Ok(ModalityRelevance { patients, global })
}

/// Indices of the features whose `|φ|` reaches the top `pct` percent:
/// `k = ceil(n · pct / 100)` features, plus every feature tied with the
/// k-th largest.
pub fn top_percentile_local(phi: &[f64], pct: f64) -> Result<Vec<usize>> {
    if !(pct > 0.0 && pct < 100.0) {
        return Err(Error::Explain(format!("percentile {pct} not in (0, 100)")));
    }
    if phi.is_empty() {
        return Ok(Vec::new());
    }
    let k = ((phi.len() as f64 * pct / 100.0).ceil() as usize).clamp(1, phi.len());
    let mut mags: Vec<f64> = phi.iter().map(|v| v.abs()).collect();
    mags.sort_by(|a, b| b.total_cmp(a));
    let cutoff = mags[k - 1];
    Ok((0..phi.len()).filter(|i| phi[*i].abs() >= cutoff).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_mass_on_text() {
        let m = [Modality::Static, Modality::Text, Modality::Text];
        assert_eq!(shares(&[0.0, 0.5, -0.2], &m).unwrap(), [0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn equal_mass_follows_counts() {
        let m = [Modality::Static, Modality::Labs, Modality::Labs, Modality::Meds, Modality::Text, Modality::Text, Modality::Text, Modality::Text];
        let s = shares(&[1.0; 8], &m).unwrap();
        assert_eq!(s, [0.125, 0.25, 0.125, 0.5]);
    }

    #[test]
    fn zero_vector_is_uniform() {
        assert_eq!(shares(&[0.0, 0.0], &[Modality::Static, Modality::Labs]).unwrap(), [0.25; 4]);
    }

    #[test]
    fn one_in_a_thousand() {
        let phi: Vec<f64> = (0..1000).map(|i| i as f64 / 7.0).collect();
        assert_eq!(top_percentile_local(&phi, 0.1).unwrap(), vec![999]);
    }

    #[test]
    fn ties_are_included_and_scale_free() {
        let phi = [0.1, -0.9, 0.9, 0.3, 0.2];
        assert_eq!(top_percentile_local(&phi, 20.0).unwrap(), vec![1, 2]);
        let scaled: Vec<f64> = phi.iter().map(|v| v * 37.5).collect();
        assert_eq!(top_percentile_local(&scaled, 20.0).unwrap(), vec![1, 2]);
        assert!(top_percentile_local(&phi, 0.0).is_err());
    }
}
