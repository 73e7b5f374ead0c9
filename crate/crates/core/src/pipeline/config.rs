//! Run configuration, stored as TOML next to every run's outputs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::stages::StageConfig;
use crate::error::{Error, Result};
use crate::eval::split::SplitPlan;
use crate::explain::{Granularity, Imputation};
use crate::fusion::IfConfig;
use crate::models::{default_grid, ExtractConfig, HyperParams, Modality, TrainConfig};
use crate::preprocess::censor::CENSOR_PATTERN;
use crate::preprocess::PreprocessConfig;
use crate::synthgen::{fixture, GeneratorConfig};

/// Where the patients come from. A file wins over a fixture; a fixture
/// replaces the shape of `generator` (size, prevalence, demographics).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CohortSource {
    pub fixture: Option<String>,
    pub file: Option<PathBuf>,
    pub generator: GeneratorConfig,
}

/// Replacement grids per modality; absent entries use the default grid.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    /// Adds KNN (k = 1, 3, 5, 7) to the static and early-fusion grids.
    pub include_knn: bool,
    #[serde(rename = "static")]
    pub statics: Option<Vec<HyperParams>>,
    pub labs: Option<Vec<HyperParams>>,
    pub meds: Option<Vec<HyperParams>>,
    pub text: Option<Vec<HyperParams>>,
    pub early: Option<Vec<HyperParams>>,
}

impl GridConfig {
    pub fn grid(&self, m: Modality) -> Vec<HyperParams> {
        let custom = match m {
            Modality::Static => &self.statics,
            Modality::Labs => &self.labs,
            Modality::Meds => &self.meds,
            Modality::Text => &self.text,
            Modality::Early => &self.early,
        };
        let mut points = custom.clone().unwrap_or_else(|| default_grid(m).points);
        if self.include_knn && matches!(m, Modality::Static | Modality::Early) {
            points.extend([1, 3, 5, 7].map(|k| HyperParams::Knn { k }));
        }
        points
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    pub early: bool,
    pub late: bool,
    pub intermediate: bool,
    pub head: IfConfig,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            early: true,
            late: true,
            intermediate: true,
            head: IfConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainOptions {
    /// Holdout patients explained, in split order.
    pub patients: usize,
    pub granularity: Granularity,
    pub coalitions: Option<usize>,
    pub imputation: Imputation,
    /// Steps of the masked-fraction grid of the perturbation curves.
    pub perturbation_steps: usize,
    pub censor_pattern: String,
}

impl Default for ExplainOptions {
    fn default() -> Self {
        Self {
            patients: 10,
            granularity: Granularity::Feature,
            coalitions: None,
            imputation: Imputation::default(),
            perturbation_steps: 10,
            censor_pattern: CENSOR_PATTERN.to_string(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapConfig {
    pub replicates: usize,
    pub alpha: f64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            replicates: 1000,
            alpha: 0.05,
        }
    }
}

/// Everything a run needs. The global `seed` overrides the generator and
/// split seeds when the configuration is resolved.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads for grid search; 0 means one per logical core.
    pub jobs: usize,
    pub cohort: CohortSource,
    pub preprocess: PreprocessConfig,
    pub extract: ExtractConfig,
    pub split: SplitPlan,
    pub train: TrainConfig,
    pub grid: GridConfig,
    pub fusion: FusionConfig,
    pub explain: ExplainOptions,
    pub bootstrap: BootstrapConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialise config: {e}")))
    }

    /// Applies the fixture and the global seed, then validates.
    pub fn resolve(mut self) -> Result<Self> {
        if let Some(name) = self.cohort.fixture.take() {
            let f = fixture(&name)?;
            let g = &mut self.cohort.generator;
            g.n_patients = f.n_patients;
            g.positive_fraction = f.positive_fraction;
            g.demographics = f.demographics;
            self.cohort.fixture = Some(name);
        }
        self.cohort.generator.seed = self.seed;
        self.split.seed = self.seed;
        if self.jobs == 0 {
            self.jobs = std::thread::available_parallelism().map_or(1, |n| n.get());
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.cohort.file.is_none() {
            self.cohort.generator.validate()?;
        }
        self.preprocess.validate()?;
        self.split.validate()?;
        self.train.validate()?;
        self.fusion.head.validate()?;
        if self.extract.text_max_len > self.train.text.max_len {
            return Err(Error::Config(format!(
                "extract.text_max_len {} exceeds train.text.max_len {}",
                self.extract.text_max_len, self.train.text.max_len
            )));
        }
        for m in Modality::UNIMODAL.iter().chain([&Modality::Early]) {
            for hp in self.grid.grid(*m) {
                hp.validate()?;
            }
        }
        if !(self.bootstrap.alpha > 0.0 && self.bootstrap.alpha < 1.0) || self.bootstrap.replicates == 0 {
            return Err(Error::Config("bootstrap needs replicates ≥ 1 and alpha in (0, 1)".into()));
        }
        if self.explain.perturbation_steps == 0 {
            return Err(Error::Config("explain.perturbation_steps must be ≥ 1".into()));
        }
        crate::preprocess::Censor::new(&self.explain.censor_pattern)
            .map_err(|e| Error::Config(format!("censor pattern: {e}")))?;
        Ok(())
    }

    /// Short cohort name used in result tables.
    pub fn cohort_name(&self) -> String {
        match (&self.cohort.file, &self.cohort.fixture) {
            (Some(f), _) => f.file_stem().map_or("cohort".into(), |s| s.to_string_lossy().into_owned()),
            (None, Some(name)) => name.clone(),
            (None, None) => "synthetic".into(),
        }
    }

    pub fn stage_config(&self) -> StageConfig {
        StageConfig {
            modalities: Modality::UNIMODAL.to_vec(),
            early: self.fusion.early,
            late: self.fusion.late,
            intermediate: self.fusion.intermediate,
            inner_folds: self.split.inner_folds,
            train: self.train.clone(),
            fusion: self.fusion.head.clone(),
            jobs: self.jobs.max(1),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let c = RunConfig {
            seed: 7,
            cohort: CohortSource {
                fixture: Some("lung-like".into()),
                ..Default::default()
            },
            ..Default::default()
        }
        .resolve()
        .unwrap();
        assert_eq!(c.cohort.generator.n_patients, 870);
        assert_eq!(c.split.seed, 7);
        let back = RunConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn grid_overrides_and_knn() {
        let c = RunConfig::from_toml(
            r#"
            [grid]
            include_knn = true
            labs = [{ kind = "gru_rnn", dropout = 0.2, units_multiplier = 1 }]
            "#,
        )
        .unwrap();
        assert_eq!(c.grid.grid(Modality::Labs).len(), 1);
        let st = c.grid.grid(Modality::Static);
        assert_eq!(st.len(), default_grid(Modality::Static).len() + 4);
    }

    #[test]
    fn bad_values_are_config_errors() {
        let bad = RunConfig::from_toml("[split]\ndev_fraction = 1.5\n").unwrap().resolve();
        assert!(matches!(bad, Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_toml("seed = \"x\""), Err(Error::Config(_))));
        let c = RunConfig::from_toml("[cohort]\nfixture = \"kidney\"\n").unwrap();
        assert!(matches!(c.resolve(), Err(Error::Config(_))));
    }

    #[test]
    fn misspelled_keys_are_rejected() {
        assert!(matches!(RunConfig::from_toml("sed = 3\n"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_toml("[explain]\npatient = 3\n"), Err(Error::Config(_))));
    }
}
