//! Late fusion: a weighted average of member probabilities.

use log::warn;

use crate::error::{Error, Result};
use crate::models::{Features, Modality, TrainedModel};

/// Weights proportional to each member's validation AUPRC, summing to 1.
/// All-zero scores fall back to uniform weights.
pub fn late_weights(auprcs: &[f64]) -> Result<Vec<f64>> {
    if auprcs.len() < 2 {
        return Err(Error::Config(format!("late fusion needs ≥ 2 members, got {}", auprcs.len())));
    }
    if auprcs.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
        return Err(Error::Config(format!("member AUPRCs must be finite and ≥ 0: {auprcs:?}")));
    }
    let total: f64 = auprcs.iter().sum();
    if total == 0.0 {
        warn!("all member AUPRCs are zero; using uniform late-fusion weights");
        return Ok(vec![1.0 / auprcs.len() as f64; auprcs.len()]);
    }
    Ok(auprcs.iter().map(|a| a / total).collect())
}

/// Weighted average of the member probabilities, row by row.
pub fn combine(weights: &[f64], member_probs: &[Vec<f64>]) -> Result<Vec<f64>> {
    if weights.len() != member_probs.len() {
        return Err(Error::Inference(format!(
            "{} weights for {} members",
            weights.len(),
            member_probs.len()
        )));
    }
    let n = member_probs.first().map_or(0, Vec::len);
    if member_probs.iter().any(|p| p.len() != n) {
        return Err(Error::Inference("members predicted different row counts".into()));
    }
    Ok((0..n)
        .map(|i| {
            let v: f64 = weights.iter().zip(member_probs).map(|(w, p)| w * p[i]).sum();
            v.clamp(0.0, 1.0)
        })
        .collect())
}

#[derive(Clone, Debug)]
pub struct LateEnsemble {
    pub members: Vec<TrainedModel>,
    pub weights: Vec<f64>,
}

impl LateEnsemble {
    pub fn new(members: Vec<TrainedModel>, validation_auprcs: &[f64]) -> Result<Self> {
        if members.len() != validation_auprcs.len() {
            return Err(Error::Config("one validation AUPRC per member is required".into()));
        }
        let weights = late_weights(validation_auprcs)?;
        Ok(Self { members, weights })
    }

    pub fn modalities(&self) -> Vec<Modality> {
        self.members.iter().map(|m| m.modality).collect()
    }

    /// `inputs[i]` holds the features of member `i`.
    pub fn predict(&self, inputs: &[&Features]) -> Result<Vec<f64>> {
        if inputs.len() != self.members.len() {
            return Err(Error::Inference(format!(
                "late ensemble has {} members but got {} inputs",
                self.members.len(),
                inputs.len()
            )));
        }
        let probs = self
            .members
            .iter()
            .zip(inputs)
            .map(|(m, x)| m.predict_proba(x))
            .collect::<Result<Vec<_>>>()?;
        combine(&self.weights, &probs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_are_proportional() {
        let w = late_weights(&[0.5, 0.25, 0.25]).unwrap();
        assert_eq!(w, vec![0.5, 0.25, 0.25]);
        let w = late_weights(&[0.3, 0.7, 0.1, 0.9]).unwrap();
        assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn zero_scores_are_uniform() {
        assert_eq!(late_weights(&[0.0, 0.0]).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn needs_two_members() {
        assert!(late_weights(&[0.4]).is_err());
        assert!(late_weights(&[0.4, -0.1]).is_err());
    }

    #[test]
    fn convex_combination() {
        assert_eq!(combine(&[0.7, 0.3], &[vec![1.0], vec![0.0]]).unwrap(), vec![0.7]);
        let w = late_weights(&[0.9, 0.0]).unwrap();
        let p = combine(&w, &[vec![0.2, 0.8], vec![0.9, 0.1]]).unwrap();
        assert_eq!(p, vec![0.2, 0.8]);
    }

    #[test]
    fn stays_within_member_range() {
        let probs = vec![vec![0.1, 0.9, 0.4], vec![0.3, 0.2, 0.4], vec![0.8, 0.5, 0.4]];
        let w = late_weights(&[0.2, 0.5, 0.3]).unwrap();
        let p = combine(&w, &probs).unwrap();
        for i in 0..3 {
            let lo = probs.iter().map(|m| m[i]).fold(1.0, f64::min);
            let hi = probs.iter().map(|m| m[i]).fold(0.0, f64::max);
            assert!(p[i] >= lo - 1e-15 && p[i] <= hi + 1e-15);
        }
    }
}
