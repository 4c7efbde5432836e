use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use super::PipelineError;
use crate::crf::{CrfSettings, LbfgsSettings};
use crate::encoder::{parse_kv, ModelConfig, PositionMode};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Encoder,
    Crf,
    Random,
    Majority,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Encoder => "encoder",
            ModelKind::Crf => "crf",
            ModelKind::Random => "random",
            ModelKind::Majority => "majority",
        })
    }
}

impl FromStr for ModelKind {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "encoder" => Ok(ModelKind::Encoder),
            "crf" => Ok(ModelKind::Crf),
            "random" => Ok(ModelKind::Random),
            "majority" => Ok(ModelKind::Majority),
            other => Err(PipelineError::Config(format!(
                "unknown model {other:?} (expected encoder, crf, random or majority)"
            ))),
        }
    }
}

/// Everything a training run needs besides the data.
///
/// Stored as flat `key = value` lines. The encoder shape keys default to a
/// desk-scale model; `lowercase` only affects the subword tokenizer.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub model: ModelKind,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Subtokens per encoder window, including `[CLS]` and `[SEP]`.
    pub max_len: usize,
    /// Tensor archive with pretrained encoder weights.
    pub pretrained: Option<PathBuf>,
    /// `external internal [T]` lines; identity names when absent.
    pub name_map: Option<PathBuf>,
    /// The exporter's vocabulary, one piece per line in row order.
    pub pretrained_vocab: Option<PathBuf>,
    pub num_merges: usize,
    pub lowercase: bool,
    /// Count N.A. as a class in the validation macro average.
    pub include_na: bool,
    pub weight_decay: f64,
    pub num_layers: usize,
    pub hidden_size: usize,
    pub num_heads: usize,
    pub ffn_size: usize,
    pub dropout: f64,
    pub position_mode: PositionMode,
    pub crf_lambda: f64,
    pub crf_min_count: usize,
    pub crf_max_iterations: usize,
    pub majority_label: Option<String>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let tiny = ModelConfig::tiny(1, 2);
        Self {
            model: ModelKind::Encoder,
            learning_rate: 5e-5,
            batch_size: 8,
            epochs: 3,
            seed: 13,
            max_len: 128,
            pretrained: None,
            name_map: None,
            pretrained_vocab: None,
            num_merges: 1000,
            lowercase: false,
            include_na: false,
            weight_decay: 0.0,
            num_layers: tiny.num_layers,
            hidden_size: tiny.hidden_size,
            num_heads: tiny.num_heads,
            ffn_size: tiny.ffn_size,
            dropout: 0.1,
            position_mode: PositionMode::Learned,
            crf_lambda: CrfSettings::default().l2_lambda,
            crf_min_count: 1,
            crf_max_iterations: LbfgsSettings::default().max_iterations,
            majority_label: None,
        }
    }
}

const KEYS: &[&str] = &[
    "model",
    "learning_rate",
    "batch_size",
    "epochs",
    "seed",
    "max_len",
    "pretrained",
    "name_map",
    "pretrained_vocab",
    "num_merges",
    "lowercase",
    "include_na",
    "weight_decay",
    "num_layers",
    "hidden_size",
    "num_heads",
    "ffn_size",
    "dropout",
    "position_mode",
    "crf_lambda",
    "crf_min_count",
    "crf_max_iterations",
    "majority_label",
];

impl TrainConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let fail = |m: String| Err(PipelineError::Config(m));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return fail(format!(
                "learning_rate {} must be finite and non-negative",
                self.learning_rate
            ));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return fail("batch_size and epochs must be at least 1".into());
        }
        if self.max_len < 3 {
            return fail(format!(
                "max_len {} leaves no room between [CLS] and [SEP]",
                self.max_len
            ));
        }
        if !(self.weight_decay >= 0.0 && self.crf_lambda >= 0.0) {
            return fail("weight_decay and crf_lambda must be non-negative".into());
        }
        if self.model == ModelKind::Encoder {
            self.model_config(4, 2)
                .validate()
                .map_err(|e| PipelineError::Config(e.to_string()))?;
        }
        Ok(())
    }

    /// Encoder shape for a given vocabulary and label count.
    pub fn model_config(&self, vocab_size: usize, num_labels: usize) -> ModelConfig {
        ModelConfig {
            num_layers: self.num_layers,
            hidden_size: self.hidden_size,
            num_heads: self.num_heads,
            ffn_size: self.ffn_size,
            vocab_size,
            max_positions: self.max_len,
            num_labels,
            num_segments: 2,
            position_mode: self.position_mode,
            dropout: self.dropout,
        }
    }

    pub fn crf_settings(&self) -> CrfSettings {
        CrfSettings {
            l2_lambda: self.crf_lambda,
            min_feature_count: self.crf_min_count,
            optimizer: LbfgsSettings {
                max_iterations: self.crf_max_iterations,
                ..Default::default()
            },
        }
    }

    /// `key = value` lines in a fixed order; unset optional keys are left out.
    pub fn to_kv_string(&self) -> String {
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        let values: Vec<Option<String>> = vec![
            Some(self.model.to_string()),
            Some(self.learning_rate.to_string()),
            Some(self.batch_size.to_string()),
            Some(self.epochs.to_string()),
            Some(self.seed.to_string()),
            Some(self.max_len.to_string()),
            path(&self.pretrained),
            path(&self.name_map),
            path(&self.pretrained_vocab),
            Some(self.num_merges.to_string()),
            Some(self.lowercase.to_string()),
            Some(self.include_na.to_string()),
            Some(self.weight_decay.to_string()),
            Some(self.num_layers.to_string()),
            Some(self.hidden_size.to_string()),
            Some(self.num_heads.to_string()),
            Some(self.ffn_size.to_string()),
            Some(self.dropout.to_string()),
            Some(self.position_mode.to_string()),
            Some(self.crf_lambda.to_string()),
            Some(self.crf_min_count.to_string()),
            Some(self.crf_max_iterations.to_string()),
            self.majority_label.clone(),
        ];
        let mut out = String::new();
        for (k, v) in KEYS.iter().zip(values) {
            if let Some(v) = v {
                out.push_str(&format!("{k} = {v}\n"));
            }
        }
        out
    }

    /// Parses `key = value` text over the defaults. Unknown keys are errors.
    pub fn from_kv_str(text: &str) -> Result<Self, PipelineError> {
        let map = parse_kv(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        Self::from_map(&map)
    }

    pub fn from_map(map: &BTreeMap<String, String>) -> Result<Self, PipelineError> {
        if let Some(k) = map.keys().find(|k| !KEYS.contains(&k.as_str())) {
            return Err(PipelineError::Config(format!("unknown key {k:?}")));
        }
        fn get<T: FromStr>(map: &BTreeMap<String, String>, key: &str, default: T) -> Result<T, PipelineError> {
            match map.get(key) {
                None => Ok(default),
                Some(v) => v
                    .parse()
                    .map_err(|_| PipelineError::Config(format!("invalid value {v:?} for {key}"))),
            }
        }
        let d = Self::default();
        let cfg = Self {
            model: get(map, "model", d.model)?,
            learning_rate: get(map, "learning_rate", d.learning_rate)?,
            batch_size: get(map, "batch_size", d.batch_size)?,
            epochs: get(map, "epochs", d.epochs)?,
            seed: get(map, "seed", d.seed)?,
            max_len: get(map, "max_len", d.max_len)?,
            pretrained: map.get("pretrained").map(PathBuf::from),
            name_map: map.get("name_map").map(PathBuf::from),
            pretrained_vocab: map.get("pretrained_vocab").map(PathBuf::from),
            num_merges: get(map, "num_merges", d.num_merges)?,
            lowercase: get(map, "lowercase", d.lowercase)?,
            include_na: get(map, "include_na", d.include_na)?,
            weight_decay: get(map, "weight_decay", d.weight_decay)?,
            num_layers: get(map, "num_layers", d.num_layers)?,
            hidden_size: get(map, "hidden_size", d.hidden_size)?,
            num_heads: get(map, "num_heads", d.num_heads)?,
            ffn_size: get(map, "ffn_size", d.ffn_size)?,
            dropout: get(map, "dropout", d.dropout)?,
            position_mode: match map.get("position_mode") {
                None => d.position_mode,
                Some(v) => v
                    .parse()
                    .map_err(|e: crate::encoder::EncoderError| PipelineError::Config(e.to_string()))?,
            },
            crf_lambda: get(map, "crf_lambda", d.crf_lambda)?,
            crf_min_count: get(map, "crf_min_count", d.crf_min_count)?,
            crf_max_iterations: get(map, "crf_max_iterations", d.crf_max_iterations)?,
            majority_label: map.get("majority_label").cloned(),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
