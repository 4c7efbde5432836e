use std::fs;
use std::path::Path;

use super::{predict_encoder, ModelKind, PipelineError, TrainConfig};
use crate::corpus::{LabelScheme, RecordSet};
use crate::crf::CrfModel;
use crate::encoder::{parse_kv, EncoderModel, ModelConfig};
use crate::eval::{baseline_majority, baseline_random};
use crate::tokenizer::MergeTable;

// one value per checkpoint, so the unboxed encoder costs nothing
#[allow(clippy::large_enum_variant)]
#[derive(Clone, Debug, PartialEq)]
pub enum TrainedModel {
    Encoder {
        model: EncoderModel,
        table: MergeTable,
    },
    Crf(CrfModel),
    /// Draws uniformly over the whole scheme with the config seed.
    Random,
    Majority(usize),
}

/// A self-contained trained model.
///
/// On disk: `config.txt` and `labels.txt`, plus `model.txt`,
/// `model.tarch`, `merges.txt` and `vocab.txt` for the encoder, or
/// `features.tsv` and `weights.tarch` for the CRF.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub scheme: LabelScheme,
    pub model: TrainedModel,
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), PipelineError> {
    fs::write(path, contents).map_err(|e| PipelineError::Io(path.display().to_string(), e))
}

fn read(path: &Path) -> Result<String, PipelineError> {
    fs::read_to_string(path).map_err(|e| PipelineError::Io(path.display().to_string(), e))
}

impl Checkpoint {
    pub fn save(&self, dir: &Path) -> Result<(), PipelineError> {
        fs::create_dir_all(dir).map_err(|e| PipelineError::Io(dir.display().to_string(), e))?;
        write(&dir.join("config.txt"), self.config.to_kv_string())?;
        write(&dir.join("labels.txt"), self.scheme.to_file_string())?;
        match &self.model {
            TrainedModel::Encoder { model, table } => {
                write(&dir.join("model.txt"), model.config.to_kv_string())?;
                model.save(&dir.join("model.tarch"))?;
                table.save(dir)?;
            }
            TrainedModel::Crf(m) => m.save(dir)?,
            TrainedModel::Random | TrainedModel::Majority(_) => {}
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, PipelineError> {
        let config = TrainConfig::from_kv_str(&read(&dir.join("config.txt"))?)?;
        let scheme = LabelScheme::parse(read(&dir.join("labels.txt"))?.as_bytes())?;
        let incompatible = |m: String| Err(PipelineError::Compatibility(m));
        let model = match config.model {
            ModelKind::Encoder => {
                let map = parse_kv(&read(&dir.join("model.txt"))?)?;
                let model_config = ModelConfig::from_map(&map, &config.model_config(0, 0))?;
                let table = MergeTable::load(dir)?;
                if model_config.vocab_size != table.vocab_size() {
                    return incompatible(format!(
                        "model expects {} vocabulary entries, tokenizer has {}",
                        model_config.vocab_size,
                        table.vocab_size()
                    ));
                }
                if model_config.num_labels != scheme.len() {
                    return incompatible(format!(
                        "model predicts {} labels, scheme has {}",
                        model_config.num_labels,
                        scheme.len()
                    ));
                }
                let model = EncoderModel::load(model_config, &dir.join("model.tarch"))?;
                TrainedModel::Encoder { model, table }
            }
            ModelKind::Crf => {
                let m = CrfModel::load(dir)?;
                if m.labels != scheme {
                    return incompatible("CRF labels differ from labels.txt".into());
                }
                TrainedModel::Crf(m)
            }
            ModelKind::Random => TrainedModel::Random,
            ModelKind::Majority => {
                let name = config.majority_label.as_deref().unwrap_or_default();
                match scheme.id(name) {
                    Some(id) => TrainedModel::Majority(id),
                    None => return incompatible(format!("majority label {name:?} is not in labels.txt")),
                }
            }
        };
        Ok(Self { config, scheme, model })
    }

    /// Labels every word of `records`; output aligns word for word.
    pub fn predict(&self, records: &RecordSet) -> Result<RecordSet, PipelineError> {
        records
            .validate(&self.scheme)
            .map_err(|e| PipelineError::Compatibility(e.to_string()))?;
        match &self.model {
            TrainedModel::Encoder { model, table } => predict_encoder(
                model,
                table,
                records,
                self.config.max_len,
                self.config.lowercase,
                self.scheme.na(),
            ),
            TrainedModel::Crf(m) => {
                let out = records
                    .records()
                    .iter()
                    .map(|r| r.relabel(m.predict(r.words())))
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(RecordSet::new(records.split, out)?)
            }
            TrainedModel::Random => {
                let labels: Vec<usize> = (0..self.scheme.len()).collect();
                Ok(baseline_random(records, &labels, self.config.seed))
            }
            TrainedModel::Majority(label) => Ok(baseline_majority(records, *label)),
        }
    }
}
