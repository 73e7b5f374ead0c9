//! Metrics, data splits, bootstrap intervals and rank statistics.

pub mod bootstrap;
pub mod metrics;
pub mod split;
pub mod stats;

pub use bootstrap::{bootstrap_ci, BootstrapCi};
pub use metrics::{compute_metrics, Interval, Metric, MetricReport, DEFAULT_THRESHOLD};
pub use split::{nested_cv, stratified_kfold, stratified_split, NestedResult, SplitMode, SplitPlan};
pub use stats::{cd_diagram_data, critical_difference, friedman_test, nemenyi_posthoc, CdDiagram, Friedman, RankMatrix};
