//! JSON checkpoints: architecture, effective config, embedding source,
//! training history and every parameter as shape + row-major values.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{Architecture, TrainConfig};
use super::embeddings::{EmbeddingSource, EmbeddingTable};
use super::train::{EpochRecord, TrainedModel};
use super::Model;
use crate::error::{Error, Result};
use crate::nn::ParamRecord;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub architecture: Architecture,
    pub config: TrainConfig,
    pub embeddings: EmbeddingSource,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
    pub params: BTreeMap<String, ParamRecord>,
}

impl Checkpoint {
    pub fn from_trained(trained: &TrainedModel) -> Self {
        let m = &trained.model;
        Checkpoint {
            format_version: FORMAT_VERSION,
            architecture: m.architecture(),
            config: m.config.clone(),
            embeddings: m.embedding_source.clone(),
            best_epoch: trained.best_epoch,
            history: trained.history.clone(),
            params: m.store.to_records(),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        serde_json::to_writer(&mut w, self)?;
        std::io::Write::flush(&mut w).map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_str(&text)?;
        if ck.format_version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "format version {} not supported (expected {FORMAT_VERSION})",
                ck.format_version
            )));
        }
        Ok(ck)
    }

    /// Rebuilds the model; `embeddings` replaces the recorded source when given.
    pub fn into_model(self, embeddings: Option<(EmbeddingTable, EmbeddingSource)>) -> Result<Model> {
        let (table, source) = match embeddings {
            Some(pair) => pair,
            None => (EmbeddingTable::from_source(&self.embeddings)?, self.embeddings),
        };
        let mut model = Model::new(self.architecture, self.config, table, source)?;
        model.store.load_records(&self.params)?;
        Ok(model)
    }
}
