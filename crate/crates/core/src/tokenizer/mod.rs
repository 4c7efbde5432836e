//! Byte-pair-encoding vocabulary, subword encoding with `[CLS]`/`[SEP]`,
//! sliding windows for long documents and word/subtoken label alignment.
//!
//! Word-internal pieces carry a `##` prefix in the vocabulary, so the first
//! piece of a word and a continuation piece with the same text have
//! different ids.

mod encode;
mod train;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;

pub use encode::{
    align_labels, decode, encode, encode_word, merge_window_predictions, AlignedLabels, TokenizedSequence,
};
pub use train::train_bpe;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const CLS: usize = 2;
pub const SEP: usize = 3;
pub const NUM_SPECIALS: usize = 4;
const SPECIAL_NAMES: [&str; NUM_SPECIALS] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]"];

pub const CONTINUATION_PREFIX: &str = "##";

#[derive(Debug, thiserror::Error)]
pub enum TokenizerError {
    #[error("cannot train a vocabulary on an empty corpus")]
    EmptyCorpus,
    #[error("word {0:?} has count 0")]
    ZeroCount(String),
    #[error("max_len {0} leaves no room for [CLS], one token and [SEP]")]
    MaxLen(usize),
    #[error("alignment: sequence covers {expected} words but {got} labels were given")]
    Alignment { expected: usize, got: usize },
    #[error("{file} line {line}: {message}")]
    Format {
        file: &'static str,
        line: usize,
        message: String,
    },
    #[error("{0}: {1}")]
    Io(String, #[source] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Piece {
    Special(usize),
    Initial(String),
    Continuation(String),
}

impl Piece {
    /// Surface text without the continuation prefix.
    pub fn text(&self) -> &str {
        match self {
            Piece::Special(i) => SPECIAL_NAMES[*i],
            Piece::Initial(s) | Piece::Continuation(s) => s,
        }
    }
}

impl fmt::Display for Piece {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Piece::Continuation(s) => write!(f, "{CONTINUATION_PREFIX}{s}"),
            other => f.write_str(other.text()),
        }
    }
}

/// Ordered merge rules plus the vocabulary derived from them.
///
/// Id layout: the four specials, then each alphabet character (sorted) in
/// its initial and continuation form, then each new merge result in
/// training order, again in both forms.
#[derive(Clone, Debug)]
pub struct MergeTable {
    alphabet: Vec<char>,
    merges: Vec<(String, String)>,
    ranks: HashMap<String, HashMap<String, usize>>,
    vocab: Vec<Piece>,
    index: HashMap<Piece, usize>,
}

impl PartialEq for MergeTable {
    fn eq(&self, other: &Self) -> bool {
        self.alphabet == other.alphabet && self.merges == other.merges
    }
}

impl MergeTable {
    pub fn from_parts(alphabet: Vec<char>, merges: Vec<(String, String)>) -> Self {
        let mut vocab: Vec<Piece> = (0..NUM_SPECIALS).map(Piece::Special).collect();
        let mut index: HashMap<Piece, usize> = vocab.iter().cloned().enumerate().map(|(i, p)| (p, i)).collect();
        let mut add = |text: String, vocab: &mut Vec<Piece>| {
            for piece in [Piece::Initial(text.clone()), Piece::Continuation(text)] {
                if !index.contains_key(&piece) {
                    index.insert(piece.clone(), vocab.len());
                    vocab.push(piece);
                }
            }
        };
        for &c in &alphabet {
            add(c.to_string(), &mut vocab);
        }
        for (l, r) in &merges {
            add(format!("{l}{r}"), &mut vocab);
        }
        let mut ranks: HashMap<String, HashMap<String, usize>> = HashMap::new();
        for (i, (l, r)) in merges.iter().enumerate() {
            ranks.entry(l.clone()).or_default().entry(r.clone()).or_insert(i);
        }
        Self {
            alphabet,
            merges,
            ranks,
            vocab,
            index,
        }
    }

    pub fn alphabet(&self) -> &[char] {
        &self.alphabet
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub(crate) fn rank(&self, left: &str, right: &str) -> Option<usize> {
        self.ranks.get(left)?.get(right).copied()
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn piece(&self, id: usize) -> Option<&Piece> {
        self.vocab.get(id)
    }

    pub fn id_of(&self, piece: &Piece) -> Option<usize> {
        self.index.get(piece).copied()
    }

    /// Merge file: one `left right` pair per line in training order.
    pub fn merges_file(&self) -> String {
        let mut out = String::new();
        for (l, r) in &self.merges {
            out.push_str(l);
            out.push(' ');
            out.push_str(r);
            out.push('\n');
        }
        out
    }

    /// Vocab file: `subword<TAB>id` per line, in id order.
    pub fn vocab_file(&self) -> String {
        let mut out = String::new();
        for (i, p) in self.vocab.iter().enumerate() {
            out.push_str(&format!("{p}\t{i}\n"));
        }
        out
    }

    /// Rebuilds a table from its merge and vocab files and checks that the
    /// vocab file agrees with the rebuilt id layout.
    pub fn parse(merges: &str, vocab: &str) -> Result<Self, TokenizerError> {
        let mut rules = Vec::new();
        for (n, line) in merges.lines().enumerate() {
            let mut parts = line.split(' ');
            match (parts.next(), parts.next(), parts.next()) {
                (Some(l), Some(r), None) if !l.is_empty() && !r.is_empty() => {
                    rules.push((l.to_string(), r.to_string()))
                }
                _ => {
                    return Err(TokenizerError::Format {
                        file: "merges",
                        line: n + 1,
                        message: "expected `left right`".into(),
                    })
                }
            }
        }
        let mut entries = Vec::new();
        for (n, line) in vocab.lines().enumerate() {
            let bad = |message: &str| TokenizerError::Format {
                file: "vocab",
                line: n + 1,
                message: message.into(),
            };
            let (piece, id) = line.rsplit_once('\t').ok_or_else(|| bad("expected `subword<TAB>id`"))?;
            let id: usize = id.parse().map_err(|_| bad("id is not an integer"))?;
            if id != n {
                return Err(bad("ids must be dense and in order"));
            }
            entries.push(piece.to_string());
        }
        let mut alphabet = Vec::new();
        let mut i = NUM_SPECIALS;
        while i + 1 < entries.len() {
            let mut chars = entries[i].chars();
            match (chars.next(), chars.next()) {
                (Some(c), None) if entries[i + 1] == format!("{CONTINUATION_PREFIX}{c}") => alphabet.push(c),
                _ => break,
            }
            i += 2;
        }
        let table = Self::from_parts(alphabet, rules);
        let rebuilt: Vec<String> = table.vocab.iter().map(|p| p.to_string()).collect();
        if rebuilt != entries {
            return Err(TokenizerError::Format {
                file: "vocab",
                line: 0,
                message: "vocabulary does not match the merge rules".into(),
            });
        }
        Ok(table)
    }

    pub fn save(&self, dir: &Path) -> Result<(), TokenizerError> {
        let io = |p: &Path, e| TokenizerError::Io(p.display().to_string(), e);
        let m = dir.join("merges.txt");
        fs::write(&m, self.merges_file()).map_err(|e| io(&m, e))?;
        let v = dir.join("vocab.txt");
        fs::write(&v, self.vocab_file()).map_err(|e| io(&v, e))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, TokenizerError> {
        let read = |name: &str| {
            let p = dir.join(name);
            fs::read_to_string(&p).map_err(|e| TokenizerError::Io(p.display().to_string(), e))
        };
        Self::parse(&read("merges.txt")?, &read("vocab.txt")?)
    }
}

/// Counts words, optionally lower-casing them first.
pub fn word_frequencies<'a>(words: impl IntoIterator<Item = &'a str>, lowercase: bool) -> BTreeMap<String, u64> {
    let mut out = BTreeMap::new();
    for w in words {
        let w = if lowercase { w.to_lowercase() } else { w.to_string() };
        *out.entry(w).or_insert(0) += 1;
    }
    out
}
