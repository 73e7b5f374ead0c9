//! Multimodal metastasis prediction from synthetic EHR cohorts.

pub mod error;
pub mod eval;
pub mod explain;
pub mod fusion;
pub mod models;
pub mod pipeline;
pub mod plot;
pub mod preprocess;
pub mod synthgen;

pub use error::{Error, Result};
