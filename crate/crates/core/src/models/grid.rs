//! Hyperparameter search grids.

use serde::{Deserialize, Serialize};

use super::{C22Estimator, HyperParams, Modality, Penalty};

/// Grid points per model kind for one modality.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperGrid {
    pub points: Vec<HyperParams>,
}

impl HyperGrid {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Keeps only the points whose kind satisfies `keep`.
    pub fn filter(&self, keep: impl Fn(&HyperParams) -> bool) -> Self {
        Self {
            points: self.points.iter().copied().filter(|p| keep(p)).collect(),
        }
    }
}

fn trees() -> Vec<HyperParams> {
    let mut out = Vec::new();
    for n_estimators in [100, 200, 300] {
        for max_depth in [2, 3, 5, 10] {
            out.push(HyperParams::Gbt { n_estimators, max_depth });
        }
    }
    for n_estimators in [100, 200, 300] {
        for max_depth in [2, 3, 5, 10] {
            out.push(HyperParams::Rforest { n_estimators, max_depth });
        }
    }
    out
}

fn logreg() -> Vec<HyperParams> {
    let mut out = Vec::new();
    for c in [0.1, 1.0, 10.0] {
        for penalty in [Penalty::L1, Penalty::L2] {
            out.push(HyperParams::Logreg { c, penalty });
        }
    }
    out
}

fn deep(make: fn(f64, usize) -> HyperParams, multipliers: &[usize]) -> Vec<HyperParams> {
    let mut out = Vec::new();
    for dropout in [0.2, 0.3] {
        for m in multipliers {
            out.push(make(dropout, *m));
        }
    }
    out
}

/// The default search space per modality. KNN is available but not part
/// of the default search.
pub fn default_grid(modality: Modality) -> HyperGrid {
    let points = match modality {
        Modality::Static | Modality::Early => {
            let mut p = trees();
            p.extend(logreg());
            p.extend(deep(
                |dropout, units_multiplier| HyperParams::Mlp {
                    dropout,
                    units_multiplier,
                },
                &[1, 2, 3],
            ));
            p
        }
        Modality::Labs | Modality::Meds => {
            let mut p: Vec<HyperParams> = [1000, 5000, 10000]
                .into_iter()
                .map(|num_kernels| HyperParams::Rocket { num_kernels })
                .collect();
            p.extend(
                [C22Estimator::Rforest, C22Estimator::Gbt, C22Estimator::Logreg]
                    .into_iter()
                    .map(|estimator| HyperParams::C22features { estimator }),
            );
            p.extend(deep(
                |dropout, units_multiplier| HyperParams::GruRnn {
                    dropout,
                    units_multiplier,
                },
                &[1, 2, 3],
            ));
            p
        }
        Modality::Text => deep(
            |dropout, units_multiplier| HyperParams::TextEncoder {
                dropout,
                units_multiplier,
            },
            &[1],
        ),
    };
    HyperGrid { points }
}
