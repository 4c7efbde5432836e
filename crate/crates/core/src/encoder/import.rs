//! Loading externally exported BERT weights.
//!
//! The external archive uses its own tensor names. A name-map file lists
//! one `external_name internal_name [T]` per line (`#` comments allowed);
//! `T` transposes the tensor first, which is what PyTorch `nn.Linear`
//! weights (stored `out × in`) need. Parameters missing from the map keep
//! their fresh initialization, which is how a new task head is attached.
//!
//! Embedding tables with more rows than the model needs (position tables,
//! or a token table when `external_vocab` is given) are cut down: token
//! rows are looked up by piece text, with `[UNK]`'s row for pieces the
//! external vocabulary lacks.

use std::collections::{BTreeMap, HashMap};

use super::{EncoderError, EncoderModel};
use crate::numerics::{ArchiveEntry, ParamSet, Tensor};
use crate::tokenizer::MergeTable;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NameMapping {
    pub external: String,
    pub internal: String,
    pub transpose: bool,
}

pub fn parse_name_map(text: &str) -> Result<Vec<NameMapping>, EncoderError> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        let transpose = match parts.get(2) {
            None => false,
            Some(&"T") if parts.len() == 3 => true,
            _ => {
                return Err(EncoderError::Checkpoint(format!(
                    "name map line {}: expected `external internal [T]`",
                    n + 1
                )))
            }
        };
        if parts.len() < 2 {
            return Err(EncoderError::Checkpoint(format!(
                "name map line {}: missing internal name",
                n + 1
            )));
        }
        out.push(NameMapping {
            external: parts[0].to_string(),
            internal: parts[1].to_string(),
            transpose,
        });
    }
    Ok(out)
}

/// What an import touched.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ImportReport {
    pub loaded: Vec<String>,
    pub kept_initial: Vec<String>,
    /// Token rows that fell back to the external `[UNK]` row.
    pub unknown_tokens: usize,
}

/// Copies mapped tensors from `entries` into `model`.
///
/// `external_vocab` is the exporter's vocabulary, one piece per row id, and
/// `table` the model's own tokenizer; when both are given the token table
/// is re-indexed by piece text. Without them an external token table must
/// already have exactly `vocab_size` rows.
pub fn import_pretrained(
    model: &mut EncoderModel,
    entries: Vec<ArchiveEntry>,
    mapping: &[NameMapping],
    external_vocab: Option<(&[String], &MergeTable)>,
) -> Result<ImportReport, EncoderError> {
    let mut external: HashMap<String, Tensor> = entries.into_iter().map(|e| (e.name, e.tensor)).collect();
    let mut incoming: BTreeMap<String, Tensor> = BTreeMap::new();
    for m in mapping {
        let t = external
            .remove(&m.external)
            .ok_or_else(|| EncoderError::Checkpoint(format!("external tensor {:?} not in archive", m.external)))?;
        let t = if m.transpose { t.transpose() } else { t };
        if incoming.insert(m.internal.clone(), t).is_some() {
            return Err(EncoderError::Checkpoint(format!("{:?} mapped twice", m.internal)));
        }
    }

    let mut report = ImportReport::default();
    if let (Some(t), Some((vocab, table))) = (incoming.get_mut("embeddings.token"), external_vocab) {
        let (rows, unknown) = remap_tokens(t, vocab, table)?;
        *t = rows;
        report.unknown_tokens = unknown;
    }

    let mut failure = None;
    model.visit_mut(&mut |p| {
        let Some(t) = incoming.remove(&p.name) else {
            report.kept_initial.push(p.name.clone());
            return;
        };
        let t = if p.name == "embeddings.position" && t.shape().len() == 2 && t.rows() > p.value.rows() {
            leading_rows(&t, p.value.rows())
        } else {
            t
        };
        // 1-d biases may arrive as 1×n or n×1
        let fits = t.shape() == p.value.shape() || (t.len() == p.value.len() && p.value.shape().len() == 1);
        if !fits {
            failure.get_or_insert(format!(
                "{:?}: external shape {:?}, model expects {:?}",
                p.name,
                t.shape(),
                p.value.shape()
            ));
            return;
        }
        p.value.data_mut().copy_from_slice(t.data());
        report.loaded.push(p.name.clone());
    });
    if let Some(m) = failure {
        return Err(EncoderError::Checkpoint(m));
    }
    if let Some(name) = incoming.keys().next() {
        return Err(EncoderError::Checkpoint(format!(
            "map targets unknown parameter {name:?}"
        )));
    }
    Ok(report)
}

fn leading_rows(t: &Tensor, n: usize) -> Tensor {
    let cols = t.cols();
    Tensor::new(vec![n, cols], t.data()[..n * cols].to_vec()).expect("row slice")
}

fn remap_tokens(t: &Tensor, vocab: &[String], table: &MergeTable) -> Result<(Tensor, usize), EncoderError> {
    if t.shape().len() != 2 || t.rows() != vocab.len() {
        return Err(EncoderError::Checkpoint(format!(
            "token table has {:?} rows but the external vocabulary lists {}",
            t.shape(),
            vocab.len()
        )));
    }
    let index: HashMap<&str, usize> = vocab.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let unk = index.get("[UNK]").copied();
    let mut out = Tensor::zeros(&[table.vocab_size(), t.cols()]);
    let mut unknown = 0;
    for id in 0..table.vocab_size() {
        let text = table.piece(id).expect("dense ids").to_string();
        let src = match index.get(text.as_str()) {
            Some(&i) => i,
            None => {
                unknown += 1;
                unk.ok_or_else(|| {
                    EncoderError::Checkpoint(format!("piece {text:?} missing and no [UNK] row to fall back on"))
                })?
            }
        };
        out.row_mut(id).copy_from_slice(t.row(src));
    }
    Ok((out, unknown))
}
