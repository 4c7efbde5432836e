//! Handover records, label schemes and the word-per-line TSV format.
//!
//! A record file holds `word<TAB>label` lines. A blank line ends a record
//! and an optional `# id: <string>` line names the record that follows.

mod scheme;
pub mod synthetic;

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;

pub use scheme::{LabelScheme, MainCategory, NA_ALIASES, NA_LABEL};
pub use synthetic::generate_synthetic;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: label {label:?} is not in the label scheme")]
    UnknownLabel { line: usize, label: String },
    #[error("duplicate record id {0:?}")]
    DuplicateId(String),
    #[error("invalid record {id:?}: {message}")]
    InvalidRecord { id: String, message: String },
    #[error("label scheme: {0}")]
    Scheme(String),
    #[error("{0}: {1}")]
    Io(String, #[source] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl FromStr for Split {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "validation" | "valid" | "dev" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(CorpusError::Scheme(format!("unknown split {other:?}"))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        })
    }
}

/// One handover document: words with one label id per word.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Record {
    id: String,
    words: Vec<String>,
    labels: Vec<usize>,
}

impl Record {
    pub fn new(id: impl Into<String>, words: Vec<String>, labels: Vec<usize>) -> Result<Self, CorpusError> {
        let id = id.into();
        let invalid = |message: String| CorpusError::InvalidRecord {
            id: id.clone(),
            message,
        };
        if words.is_empty() {
            return Err(invalid("a record needs at least one word".into()));
        }
        if words.len() != labels.len() {
            return Err(invalid(format!("{} words but {} labels", words.len(), labels.len())));
        }
        if let Some(w) = words
            .iter()
            .find(|w| w.is_empty() || w.chars().any(char::is_whitespace))
        {
            return Err(invalid(format!("word {w:?} is empty or contains whitespace")));
        }
        if id.is_empty() || id.contains('\n') {
            return Err(invalid("record id must be a non-empty single line".into()));
        }
        Ok(Self { id, words, labels })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Same words and id with a different label sequence.
    pub fn relabel(&self, labels: Vec<usize>) -> Result<Self, CorpusError> {
        Record::new(self.id.clone(), self.words.clone(), labels)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RecordSet {
    pub split: Split,
    records: Vec<Record>,
}

impl RecordSet {
    pub fn new(split: Split, records: Vec<Record>) -> Result<Self, CorpusError> {
        let mut seen = HashSet::with_capacity(records.len());
        for r in &records {
            if !seen.insert(r.id()) {
                return Err(CorpusError::DuplicateId(r.id().to_string()));
            }
        }
        Ok(Self { split, records })
    }

    pub fn empty(split: Split) -> Self {
        Self {
            split,
            records: Vec::new(),
        }
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn num_words(&self) -> usize {
        self.records.iter().map(Record::len).sum()
    }

    /// Checks every label id against the scheme.
    pub fn validate(&self, scheme: &LabelScheme) -> Result<(), CorpusError> {
        for r in &self.records {
            if let Some(&bad) = r.labels().iter().find(|&&l| l >= scheme.len()) {
                return Err(CorpusError::InvalidRecord {
                    id: r.id().to_string(),
                    message: format!("label id {bad} outside a scheme of {} labels", scheme.len()),
                });
            }
        }
        Ok(())
    }
}

/// Reads records from the TSV format.
///
/// With `scheme = None` a scheme is built from the observed labels, so the
/// returned scheme always contains N.A.
pub fn parse_records(
    reader: impl BufRead,
    split: Split,
    scheme: Option<&LabelScheme>,
) -> Result<(RecordSet, LabelScheme), CorpusError> {
    struct Pending {
        id: Option<String>,
        words: Vec<String>,
        labels: Vec<(String, usize)>,
    }
    type Raw = (String, Vec<String>, Vec<(String, usize)>);
    let mut raw: Vec<Raw> = Vec::new();
    let mut cur = Pending {
        id: None,
        words: Vec::new(),
        labels: Vec::new(),
    };
    let flush = |cur: &mut Pending, raw: &mut Vec<_>| {
        if !cur.words.is_empty() {
            let id = cur.id.take().unwrap_or_else(|| format!("rec{}", raw.len()));
            raw.push((id, std::mem::take(&mut cur.words), std::mem::take(&mut cur.labels)));
        }
    };
    for (n, line) in reader.lines().enumerate() {
        let line_no = n + 1;
        let line = line.map_err(|e| CorpusError::Io(format!("line {line_no}"), e))?;
        if line.is_empty() {
            flush(&mut cur, &mut raw);
            cur.id = None;
            continue;
        }
        if line.starts_with('#') && !line.contains('\t') {
            if let Some(id) = line.strip_prefix("# id:") {
                flush(&mut cur, &mut raw);
                cur.id = Some(id.trim().to_string());
            }
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 2 || cols[0].is_empty() || cols[1].is_empty() {
            return Err(CorpusError::Parse {
                line: line_no,
                message: format!("expected `word<TAB>label`, found {} column(s)", cols.len()),
            });
        }
        cur.words.push(cols[0].to_string());
        cur.labels.push((cols[1].to_string(), line_no));
    }
    flush(&mut cur, &mut raw);

    let scheme = match scheme {
        Some(s) => s.clone(),
        None => LabelScheme::from_observed(raw.iter().flat_map(|(_, _, ls)| ls.iter().map(|(l, _)| l.as_str()))),
    };
    let mut records = Vec::with_capacity(raw.len());
    for (id, words, labels) in raw {
        let ids = labels
            .into_iter()
            .map(|(l, line)| scheme.id(&l).ok_or(CorpusError::UnknownLabel { line, label: l }))
            .collect::<Result<Vec<_>, _>>()?;
        records.push(Record::new(id, words, ids)?);
    }
    Ok((RecordSet::new(split, records)?, scheme))
}

pub fn read_records(
    path: &Path,
    split: Split,
    scheme: Option<&LabelScheme>,
) -> Result<(RecordSet, LabelScheme), CorpusError> {
    let file = File::open(path).map_err(|e| CorpusError::Io(path.display().to_string(), e))?;
    parse_records(BufReader::new(file), split, scheme)
}

/// Writes records in the TSV format, always emitting `# id:` lines.
pub fn serialize_records(set: &RecordSet, scheme: &LabelScheme) -> String {
    let mut out = String::new();
    for r in set.records() {
        out.push_str("# id: ");
        out.push_str(r.id());
        out.push('\n');
        for (w, &l) in r.words().iter().zip(r.labels()) {
            out.push_str(w);
            out.push('\t');
            out.push_str(scheme.name(l));
            out.push('\n');
        }
        out.push('\n');
    }
    out
}

/// Labels that occur at least once in the training split. Macro averages
/// are taken over exactly this set.
pub fn evaluated_classes(train: &RecordSet, scheme: &LabelScheme) -> BTreeSet<usize> {
    train
        .records()
        .iter()
        .flat_map(|r| r.labels().iter().copied())
        .filter(|&l| l < scheme.len())
        .collect()
}
