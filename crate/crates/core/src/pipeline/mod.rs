//! End-to-end orchestration: selection, the three training stages,
//! evaluation tables and run directories.

pub mod config;
pub mod run;
pub mod stages;
pub mod tables;

pub use config::{BootstrapConfig, CohortSource, ExplainOptions, FusionConfig, GridConfig, RunConfig};
pub use run::{cmd_evaluate, cmd_explain, cmd_generate, cmd_report, cmd_train, Manifest, Run};
pub use stages::{
    predict_intermediate, select, train_stages, GridScore, Inputs, Selection, StageConfig, TrainedStages,
    UnimodalWinner, CENSORED_NAME, EARLY_NAME, INTERMEDIATE_NAME, LATE_NAME,
};
