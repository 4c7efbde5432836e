use super::{MergeTable, Piece, TokenizerError, CLS, SEP, UNK};

/// One encoder input window.
///
/// Positions 0 and `len - 1` hold `[CLS]` and `[SEP]`. Word indices are
/// local to the window: local word `i` is document word `word_offset + i`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenizedSequence {
    pub token_ids: Vec<usize>,
    pub word_index_of: Vec<Option<usize>>,
    /// Position of each local word's first subtoken, or `None` when that
    /// subtoken falls in an earlier window.
    pub first_subtoken_of: Vec<Option<usize>>,
    pub word_offset: usize,
    /// Offset of this window's first content token in the document's
    /// subtoken stream.
    pub start: usize,
}

impl TokenizedSequence {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    /// Number of distinct source words with at least one subtoken here.
    pub fn num_words(&self) -> usize {
        self.first_subtoken_of.len()
    }

    fn content_len(&self) -> usize {
        self.token_ids.len() - 2
    }
}

/// Splits one word into vocabulary ids by applying merges in table order.
pub fn encode_word(word: &str, table: &MergeTable) -> Vec<usize> {
    let mut symbols: Vec<String> = word.chars().map(String::from).collect();
    let mut floor = 0;
    loop {
        let next = symbols
            .windows(2)
            .filter_map(|p| table.rank(&p[0], &p[1]))
            .filter(|&r| r >= floor)
            .min();
        let Some(rank) = next else { break };
        let (left, right) = &table.merges()[rank];
        let mut out = Vec::with_capacity(symbols.len());
        let mut i = 0;
        while i < symbols.len() {
            if i + 1 < symbols.len() && &symbols[i] == left && &symbols[i + 1] == right {
                out.push(format!("{left}{right}"));
                i += 2;
            } else {
                out.push(std::mem::take(&mut symbols[i]));
                i += 1;
            }
        }
        symbols = out;
        floor = rank + 1;
    }
    symbols
        .into_iter()
        .enumerate()
        .map(|(i, s)| {
            let piece = if i == 0 {
                Piece::Initial(s)
            } else {
                Piece::Continuation(s)
            };
            table.id_of(&piece).unwrap_or(UNK)
        })
        .collect()
}

/// Encodes a document into one or more windows of at most `max_len` ids.
///
/// Documents whose subtoken stream does not fit are cut into windows of
/// `max_len - 2` content tokens that overlap by a quarter of that length.
pub fn encode<S: AsRef<str>>(
    words: &[S],
    table: &MergeTable,
    max_len: usize,
) -> Result<Vec<TokenizedSequence>, TokenizerError> {
    if max_len < 3 {
        return Err(TokenizerError::MaxLen(max_len));
    }
    let mut stream: Vec<(usize, usize)> = Vec::new();
    let mut cache = std::collections::HashMap::new();
    for (w, word) in words.iter().enumerate() {
        let ids = cache
            .entry(word.as_ref())
            .or_insert_with(|| encode_word(word.as_ref(), table));
        stream.extend(ids.iter().map(|&id| (id, w)));
    }

    let capacity = max_len - 2;
    let stride = capacity - capacity / 4;
    let mut windows = Vec::new();
    let mut start = 0;
    loop {
        let end = (start + capacity).min(stream.len());
        windows.push(build_window(&stream[start..end], start, &stream));
        if end >= stream.len() {
            break;
        }
        start += stride;
    }
    Ok(windows)
}

fn build_window(content: &[(usize, usize)], start: usize, stream: &[(usize, usize)]) -> TokenizedSequence {
    let word_offset = content.first().map_or(0, |&(_, w)| w);
    let num_words = content.last().map_or(0, |&(_, w)| w + 1 - word_offset);
    let mut token_ids = Vec::with_capacity(content.len() + 2);
    let mut word_index_of = Vec::with_capacity(content.len() + 2);
    let mut first_subtoken_of = vec![None; num_words];
    token_ids.push(CLS);
    word_index_of.push(None);
    for (k, &(id, w)) in content.iter().enumerate() {
        let global = start + k;
        let is_first = global == 0 || stream[global - 1].1 != w;
        if is_first {
            first_subtoken_of[w - word_offset] = Some(k + 1);
        }
        token_ids.push(id);
        word_index_of.push(Some(w - word_offset));
    }
    token_ids.push(SEP);
    word_index_of.push(None);
    TokenizedSequence {
        token_ids,
        word_index_of,
        first_subtoken_of,
        word_offset,
        start,
    }
}

/// Recovers word surfaces from encoded windows. Unknown pieces decode as
/// `[UNK]`.
pub fn decode(windows: &[TokenizedSequence], table: &MergeTable) -> Vec<String> {
    let mut words: Vec<String> = Vec::new();
    let mut next_global = 0;
    for win in windows {
        for (pos, (&id, w)) in win.token_ids.iter().zip(&win.word_index_of).enumerate() {
            let Some(w) = w else { continue };
            let global = win.start + pos - 1;
            if global < next_global {
                continue;
            }
            next_global = global + 1;
            let word = win.word_offset + w;
            if words.len() <= word {
                words.resize(word + 1, String::new());
            }
            words[word].push_str(table.piece(id).map_or("[UNK]", Piece::text));
        }
    }
    words
}

/// Per-position labels for one window plus the evaluation mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AlignedLabels {
    /// `None` marks `[CLS]`/`[SEP]`, which are ignored by loss and metrics.
    pub labels: Vec<Option<usize>>,
    /// True only at each word's first subtoken.
    pub mask: Vec<bool>,
}

/// Copies each word's label onto all of its subtokens.
///
/// `word_labels` holds one label per distinct word in `seq`, i.e. the
/// document labels `word_offset .. word_offset + seq.num_words()`.
pub fn align_labels(seq: &TokenizedSequence, word_labels: &[usize]) -> Result<AlignedLabels, TokenizerError> {
    if word_labels.len() != seq.num_words() {
        return Err(TokenizerError::Alignment {
            expected: seq.num_words(),
            got: word_labels.len(),
        });
    }
    let labels = seq.word_index_of.iter().map(|w| w.map(|w| word_labels[w])).collect();
    let mut mask = vec![false; seq.len()];
    for &pos in seq.first_subtoken_of.iter().flatten() {
        mask[pos] = true;
    }
    Ok(AlignedLabels { labels, mask })
}

/// Picks one prediction per document word from per-window, per-position
/// predictions. A word seen in several windows takes the prediction from
/// the window where its first subtoken is farthest from a window edge; the
/// earlier window wins ties.
pub fn merge_window_predictions<T: Copy>(
    windows: &[TokenizedSequence],
    predictions: &[Vec<T>],
    num_words: usize,
) -> Vec<Option<T>> {
    let mut best: Vec<Option<(usize, T)>> = vec![None; num_words];
    for (win, preds) in windows.iter().zip(predictions) {
        let content = win.content_len();
        for (local, pos) in win.first_subtoken_of.iter().enumerate() {
            let Some(pos) = *pos else { continue };
            let word = win.word_offset + local;
            if word >= num_words {
                continue;
            }
            let margin = (pos - 1).min(content - pos);
            if best[word].is_none_or(|(m, _)| margin > m) {
                best[word] = Some((margin, preds[pos]));
            }
        }
    }
    best.into_iter().map(|b| b.map(|(_, p)| p)).collect()
}
