//! Perturbation curves: mask a growing share of players in attribution
//! order and track the mean model output.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Imputation, Predictor, SampleExplanation, SampleGame};
use crate::error::{Error, Result};
use crate::preprocess::MultimodalSample;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Largest signed attribution first.
    HighToLow,
    LowToHigh,
    Random,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::HighToLow, Strategy::Random, Strategy::LowToHigh];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::HighToLow => "high_to_low",
            Strategy::LowToHigh => "low_to_high",
            Strategy::Random => "random",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaithfulnessCurve {
    pub strategy: Strategy,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl FaithfulnessCurve {
    /// Trapezoid area of `y(0) - y(x)` over the grid.
    pub fn drop_area(&self) -> f64 {
        let y0 = self.y[0];
        self.x
            .windows(2)
            .zip(self.y.windows(2))
            .map(|(x, y)| (x[1] - x[0]) * ((y0 - y[0]) + (y0 - y[1])) / 2.0)
            .sum()
    }

    /// First masked fraction whose mean output is below `threshold`.
    pub fn crossing(&self, threshold: f64) -> Option<f64> {
        self.x.iter().zip(&self.y).find(|(_, y)| **y < threshold).map(|(x, _)| *x)
    }
}

/// `n + 1` evenly spaced fractions from 0 to 1.
pub fn even_grid(n: usize) -> Vec<f64> {
    (0..=n).map(|i| i as f64 / n as f64).collect()
}

fn check_grid(grid: &[f64]) -> Result<()> {
    let ok = grid.len() >= 2
        && grid[0] == 0.0
        && grid[grid.len() - 1] == 1.0
        && grid.windows(2).all(|w| w[1] > w[0]);
    if ok {
        Ok(())
    } else {
        Err(Error::Explain("fraction grid must increase strictly from 0 to 1".into()))
    }
}

/// Player order for one sample. Ties keep serialized order.
pub fn masking_order(phi: &[f64], strategy: Strategy, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..phi.len()).collect();
    match strategy {
        Strategy::HighToLow => idx.sort_by(|a, b| phi[*b].total_cmp(&phi[*a])),
        Strategy::LowToHigh => idx.sort_by(|a, b| phi[*a].total_cmp(&phi[*b])),
        Strategy::Random => idx.shuffle(rng),
    }
    idx
}

#[allow(clippy::too_many_arguments)]
pub fn perturbation_curve(
    predict: &Predictor<'_>,
    samples: &[MultimodalSample],
    explanations: &[SampleExplanation],
    strategy: Strategy,
    grid: &[f64],
    imputation: &Imputation,
    seed: u64,
) -> Result<FaithfulnessCurve> {
    check_grid(grid)?;
    if samples.is_empty() || samples.len() != explanations.len() {
        return Err(Error::Explain("need one explanation per sample".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut y = vec![0.0; grid.len()];
    for (s, e) in samples.iter().zip(explanations) {
        let game = SampleGame::new(s, e.granularity, imputation.clone(), predict)?;
        let m = e.attribution.phi.len();
        if m != super::shapley::Game::players(&game) {
            return Err(Error::Explain(format!("explanation for {} does not match its sample", s.patient_id)));
        }
        let order = masking_order(&e.attribution.phi, strategy, &mut rng);
        let coalitions: Vec<Vec<bool>> = grid
            .iter()
            .map(|f| {
                let k = (f * m as f64).round() as usize;
                let mut keep = vec![true; m];
                order.iter().take(k).for_each(|i| keep[*i] = false);
                keep
            })
            .collect();
        let out = super::shapley::Game::values(&game, &coalitions)?;
        for (acc, v) in y.iter_mut().zip(out) {
            *acc += v / samples.len() as f64;
        }
    }
    Ok(FaithfulnessCurve {
        strategy,
        x: grid.to_vec(),
        y,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::explain::{explain_sample, ExplainConfig, Granularity};

    fn samples() -> Vec<MultimodalSample> {
        (0..4)
            .map(|i| MultimodalSample {
                patient_id: format!("p{i}"),
                statics: vec![1.0, 1.0, (i % 2) as f64],
                labs: (0..6).map(|t| (t + i) as f64).collect(),
                meds: vec![0.0; 6],
                notes: vec![vec![4, 5]],
                note_months: vec![1],
                label: 1,
            })
            .collect()
    }

    fn model(xs: &[MultimodalSample]) -> Result<Vec<f64>> {
        Ok(xs
            .iter()
            .map(|x| {
                let z = 2.0 * x.statics[0] + x.statics[1] - 0.5 * x.statics[2] + 0.1 * x.labs[5] - 1.5;
                1.0 / (1.0 + (-z).exp())
            })
            .collect())
    }

    #[test]
    fn endpoints_agree_across_strategies() {
        let xs = samples();
        let cfg = ExplainConfig {
            granularity: Granularity::Feature,
            coalitions: Some(512),
            ..Default::default()
        };
        let ex: Vec<_> = xs.iter().map(|s| explain_sample(s, &model, &cfg).unwrap()).collect();
        let grid = even_grid(10);
        let curves: Vec<_> = Strategy::ALL
            .iter()
            .map(|st| perturbation_curve(&model, &xs, &ex, *st, &grid, &Imputation::default(), 3).unwrap())
            .collect();
        for c in &curves[1..] {
            assert_eq!(c.y[0], curves[0].y[0]);
            assert_eq!(c.y[10], curves[0].y[10]);
        }
        let [high, random, low] = [&curves[0], &curves[1], &curves[2]];
        assert!(high.drop_area() >= random.drop_area());
        assert!(random.drop_area() >= low.drop_area());
        assert!(high.crossing(0.5).unwrap() < low.crossing(0.5).unwrap_or(2.0));
    }

    #[test]
    fn area_by_hand() {
        let c = FaithfulnessCurve {
            strategy: Strategy::Random,
            x: vec![0.0, 0.5, 1.0],
            y: vec![1.0, 0.5, 0.0],
        };
        assert_eq!(c.drop_area(), 0.5);
        assert_eq!(c.crossing(0.5), Some(1.0));
        assert!(check_grid(&[0.0, 0.5, 0.5, 1.0]).is_err());
    }
}
