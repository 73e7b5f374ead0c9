//! Early, late and intermediate fusion on top of the unimodal models.

pub mod early;
pub mod intermediate;
pub mod late;

pub use early::{early_feature_names, early_fuse, EarlyConfig, MedAggregate};
pub use intermediate::{build_intermediate, IfConfig, IntermediateModel, Stage};
pub use late::{combine, late_weights, LateEnsemble};
