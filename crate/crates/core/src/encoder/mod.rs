//! Transformer encoder with BERT-style input embeddings and a per-token
//! classification head.

mod config;
mod import;
mod model;

use std::collections::BTreeMap;
use std::path::Path;

pub use config::{parse_kv, ModelConfig, PositionMode};
pub use import::{import_pretrained, parse_name_map, ImportReport, NameMapping};
pub use model::{
    sinusoidal_positions, token_loss, EncodeTrace, EncoderLayer, EncoderModel, Linear, Mode, Norm, INIT_STD,
};

use crate::numerics::archive::{decode_archive, encode_archive, read_archive, write_archive};
use crate::numerics::{ArchiveEntry, NumericsError, ParamSet, Tensor};

#[derive(Debug, thiserror::Error)]
pub enum EncoderError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("range error: {0}")]
    Range(String),
    #[error("every position is ignored; nothing to score")]
    NoTargets,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

impl EncoderModel {
    /// Parameters as archive entries, in visit order.
    pub fn to_entries(&self) -> Vec<ArchiveEntry> {
        let mut out = Vec::new();
        self.visit(&mut |p| out.push(ArchiveEntry::f64(p.name.clone(), p.value.clone())));
        out
    }

    /// Overwrites every parameter from `entries`; each name must be present
    /// with the matching shape. Extra entries are an error.
    pub fn load_entries(&mut self, entries: Vec<ArchiveEntry>) -> Result<(), EncoderError> {
        let mut by_name: BTreeMap<String, Tensor> = BTreeMap::new();
        for e in entries {
            if by_name.insert(e.name.clone(), e.tensor).is_some() {
                return Err(EncoderError::Checkpoint(format!("duplicate tensor {:?}", e.name)));
            }
        }
        let mut failure = None;
        self.visit_mut(&mut |p| {
            if failure.is_some() {
                return;
            }
            match by_name.remove(&p.name) {
                None => failure = Some(format!("missing tensor {:?}", p.name)),
                Some(t) if t.shape() != p.value.shape() => {
                    failure = Some(format!(
                        "tensor {:?} has shape {:?}, expected {:?}",
                        p.name,
                        t.shape(),
                        p.value.shape()
                    ))
                }
                Some(t) => {
                    p.value = t;
                    p.zero_grad();
                }
            }
        });
        if let Some(m) = failure {
            return Err(EncoderError::Checkpoint(m));
        }
        if let Some(extra) = by_name.keys().next() {
            return Err(EncoderError::Checkpoint(format!("unexpected tensor {extra:?}")));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        encode_archive(&self.to_entries())
    }

    pub fn from_bytes(config: ModelConfig, bytes: &[u8]) -> Result<Self, EncoderError> {
        let mut model = EncoderModel::new(config, 0)?;
        model.load_entries(decode_archive(bytes)?)?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<(), EncoderError> {
        Ok(write_archive(path, &self.to_entries())?)
    }

    pub fn load(config: ModelConfig, path: &Path) -> Result<Self, EncoderError> {
        let mut model = EncoderModel::new(config, 0)?;
        model.load_entries(read_archive(path)?)?;
        Ok(model)
    }
}
