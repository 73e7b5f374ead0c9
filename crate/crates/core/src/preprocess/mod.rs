//! Raw patients to fixed-shape modalities.

pub mod censor;
pub mod dataset;
pub mod encode;
pub mod icd;
pub mod tokenizer;

pub use censor::{censor_text, Censor};
pub use dataset::EncodedDataset;
pub use encode::{MultimodalSample, PreprocessConfig, Vocabularies, MISSING_LAB, MONTHS};
pub use icd::{aggregate_icd10, encode_age, AgeGroup};
pub use tokenizer::WordPiece;
