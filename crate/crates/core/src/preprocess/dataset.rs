//! Encoded dataset file: the vocabularies travel with the samples so every
//! downstream stage encodes and decodes identically.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::encode::{MultimodalSample, Vocabularies};
use crate::error::{Error, Result};

pub const FORMAT: &str = "metafuse-dataset/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncodedDataset {
    pub format: String,
    pub schema_hash: String,
    pub schema: Vocabularies,
    pub samples: Vec<MultimodalSample>,
}

impl EncodedDataset {
    pub fn new(schema: Vocabularies, samples: Vec<MultimodalSample>) -> Self {
        Self {
            format: FORMAT.to_string(),
            schema_hash: schema.schema_hash(),
            schema,
            samples,
        }
    }

    pub fn labels(&self) -> Vec<u8> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn subset(&self, idx: &[usize]) -> Vec<MultimodalSample> {
        idx.iter().map(|&i| self.samples[i].clone()).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut w, self)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let d: Self = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        if d.format != FORMAT {
            return Err(Error::Encoding(format!("unsupported dataset format `{}`", d.format)));
        }
        if d.schema.schema_hash() != d.schema_hash {
            return Err(Error::Encoding("dataset schema hash does not match its schema block".into()));
        }
        Ok(d)
    }
}
