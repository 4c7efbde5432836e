use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use super::EncoderError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PositionMode {
    Learned,
    Sinusoidal,
}

impl fmt::Display for PositionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PositionMode::Learned => "learned",
            PositionMode::Sinusoidal => "sinusoidal",
        })
    }
}

impl FromStr for PositionMode {
    type Err = EncoderError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "learned" => Ok(PositionMode::Learned),
            "sinusoidal" => Ok(PositionMode::Sinusoidal),
            other => Err(EncoderError::Config(format!("unknown position_mode {other:?}"))),
        }
    }
}

/// Shape of an encoder plus its classification head.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub hidden_size: usize,
    pub num_heads: usize,
    pub ffn_size: usize,
    pub vocab_size: usize,
    pub max_positions: usize,
    pub num_labels: usize,
    pub num_segments: usize,
    pub position_mode: PositionMode,
    pub dropout: f64,
}

impl ModelConfig {
    /// BERT-base shape: 12 layers, 768 hidden, 12 heads.
    pub fn bert_base(num_labels: usize) -> Self {
        Self {
            num_layers: 12,
            hidden_size: 768,
            num_heads: 12,
            ffn_size: 3072,
            vocab_size: 30522,
            max_positions: 512,
            num_labels,
            num_segments: 2,
            position_mode: PositionMode::Learned,
            dropout: 0.1,
        }
    }

    /// BERT-large shape: 24 layers, 1024 hidden, 16 heads.
    pub fn bert_large(num_labels: usize) -> Self {
        Self {
            num_layers: 24,
            hidden_size: 1024,
            num_heads: 16,
            ffn_size: 4096,
            ..Self::bert_base(num_labels)
        }
    }

    /// A desk-scale configuration for synthetic experiments.
    pub fn tiny(vocab_size: usize, num_labels: usize) -> Self {
        Self {
            num_layers: 2,
            hidden_size: 32,
            num_heads: 2,
            ffn_size: 64,
            vocab_size,
            max_positions: 128,
            num_labels,
            num_segments: 2,
            position_mode: PositionMode::Learned,
            dropout: 0.0,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_size / self.num_heads
    }

    pub fn validate(&self) -> Result<(), EncoderError> {
        let fail = |m: String| Err(EncoderError::Config(m));
        if self.num_heads == 0 || self.hidden_size == 0 || !self.hidden_size.is_multiple_of(self.num_heads) {
            return fail(format!(
                "hidden_size {} must be a positive multiple of num_heads {}",
                self.hidden_size, self.num_heads
            ));
        }
        if self.ffn_size < self.hidden_size {
            return fail(format!("ffn_size {} < hidden_size {}", self.ffn_size, self.hidden_size));
        }
        if self.num_labels < 2 {
            return fail(format!("num_labels {} < 2", self.num_labels));
        }
        if self.vocab_size == 0 || self.max_positions == 0 || self.num_segments == 0 {
            return fail("vocab_size, max_positions and num_segments must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }

    /// Closed-form count of scalar parameters.
    pub fn param_count(&self) -> usize {
        let (h, f) = (self.hidden_size, self.ffn_size);
        let positions = match self.position_mode {
            PositionMode::Learned => self.max_positions * h,
            PositionMode::Sinusoidal => 0,
        };
        let embeddings = self.vocab_size * h + self.num_segments * h + positions + 2 * h;
        let attention = 4 * (h * h + h) + 2 * h;
        let ffn = (h * f + f) + (f * h + h) + 2 * h;
        let classifier = h * self.num_labels + self.num_labels;
        embeddings + self.num_layers * (attention + ffn) + classifier
    }

    /// Flat `key = value` lines in a fixed key order.
    pub fn to_kv_string(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.to_pairs() {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }

    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("num_layers", self.num_layers.to_string()),
            ("hidden_size", self.hidden_size.to_string()),
            ("num_heads", self.num_heads.to_string()),
            ("ffn_size", self.ffn_size.to_string()),
            ("vocab_size", self.vocab_size.to_string()),
            ("max_positions", self.max_positions.to_string()),
            ("num_labels", self.num_labels.to_string()),
            ("num_segments", self.num_segments.to_string()),
            ("position_mode", self.position_mode.to_string()),
            ("dropout", self.dropout.to_string()),
        ]
    }

    /// Reads the keys written by [`ModelConfig::to_kv_string`]; keys that
    /// are missing keep the values from `base`.
    pub fn from_map(map: &BTreeMap<String, String>, base: &ModelConfig) -> Result<Self, EncoderError> {
        fn get<T: FromStr>(map: &BTreeMap<String, String>, key: &str, default: T) -> Result<T, EncoderError> {
            match map.get(key) {
                None => Ok(default),
                Some(v) => v
                    .parse()
                    .map_err(|_| EncoderError::Config(format!("invalid value {v:?} for {key}"))),
            }
        }
        let cfg = ModelConfig {
            num_layers: get(map, "num_layers", base.num_layers)?,
            hidden_size: get(map, "hidden_size", base.hidden_size)?,
            num_heads: get(map, "num_heads", base.num_heads)?,
            ffn_size: get(map, "ffn_size", base.ffn_size)?,
            vocab_size: get(map, "vocab_size", base.vocab_size)?,
            max_positions: get(map, "max_positions", base.max_positions)?,
            num_labels: get(map, "num_labels", base.num_labels)?,
            num_segments: get(map, "num_segments", base.num_segments)?,
            position_mode: match map.get("position_mode") {
                None => base.position_mode,
                Some(v) => v.parse()?,
            },
            dropout: get(map, "dropout", base.dropout)?,
        };
        Ok(cfg)
    }
}

/// Parses `key = value` lines; `#` starts a comment line.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>, EncoderError> {
    let mut map = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| EncoderError::Config(format!("line {}: expected `key = value`", n + 1)))?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}
