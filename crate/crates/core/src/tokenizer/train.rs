use std::collections::{BTreeMap, BTreeSet, HashMap};

use super::{MergeTable, TokenizerError};

/// Learns `num_merges` BPE merges from a word-frequency table.
///
/// Words start as character sequences. Each iteration merges the adjacent
/// symbol pair with the highest count (weighted by word frequency), breaking
/// ties by the lexicographically smallest `(left, right)`. Training stops
/// early once every word is a single symbol.
pub fn train_bpe(word_frequency: &BTreeMap<String, u64>, num_merges: usize) -> Result<MergeTable, TokenizerError> {
    if word_frequency.is_empty() {
        return Err(TokenizerError::EmptyCorpus);
    }
    if let Some((w, _)) = word_frequency.iter().find(|(_, &c)| c == 0) {
        return Err(TokenizerError::ZeroCount(w.clone()));
    }

    let mut symbols: Vec<String> = Vec::new();
    let mut symbol_id: HashMap<String, u32> = HashMap::new();
    let mut intern = |s: String, symbols: &mut Vec<String>| -> u32 {
        *symbol_id.entry(s.clone()).or_insert_with(|| {
            symbols.push(s);
            (symbols.len() - 1) as u32
        })
    };

    let mut alphabet = BTreeSet::new();
    let mut words: Vec<Vec<u32>> = Vec::with_capacity(word_frequency.len());
    let mut counts: Vec<i64> = Vec::with_capacity(word_frequency.len());
    for (word, &count) in word_frequency {
        let syms = word
            .chars()
            .map(|c| {
                alphabet.insert(c);
                intern(c.to_string(), &mut symbols)
            })
            .collect();
        words.push(syms);
        counts.push(count as i64);
    }

    let mut pair_counts: HashMap<(u32, u32), i64> = HashMap::new();
    let mut occurs_in: HashMap<(u32, u32), BTreeSet<usize>> = HashMap::new();
    for (wi, w) in words.iter().enumerate() {
        for p in w.windows(2) {
            *pair_counts.entry((p[0], p[1])).or_default() += counts[wi];
            occurs_in.entry((p[0], p[1])).or_default().insert(wi);
        }
    }

    let mut merges = Vec::with_capacity(num_merges);
    while merges.len() < num_merges {
        let best = pair_counts
            .iter()
            .filter(|(_, &c)| c > 0)
            .max_by(|(a, ca), (b, cb)| {
                ca.cmp(cb).then_with(|| {
                    let ka = (&symbols[a.0 as usize], &symbols[a.1 as usize]);
                    let kb = (&symbols[b.0 as usize], &symbols[b.1 as usize]);
                    kb.cmp(&ka)
                })
            })
            .map(|(&p, _)| p);
        let Some((left, right)) = best else { break };
        let merged = format!("{}{}", symbols[left as usize], symbols[right as usize]);
        let new_id = intern(merged, &mut symbols);
        merges.push((symbols[left as usize].clone(), symbols[right as usize].clone()));

        let affected = occurs_in.remove(&(left, right)).unwrap_or_default();
        for wi in affected {
            let c = counts[wi];
            for p in words[wi].windows(2) {
                let key = (p[0], p[1]);
                if let Some(v) = pair_counts.get_mut(&key) {
                    *v -= c;
                    if *v == 0 {
                        pair_counts.remove(&key);
                    }
                }
            }
            let merged_word = merge_pair(&words[wi], left, right, new_id);
            words[wi] = merged_word;
            for p in words[wi].windows(2) {
                let key = (p[0], p[1]);
                *pair_counts.entry(key).or_default() += c;
                occurs_in.entry(key).or_default().insert(wi);
            }
        }
        pair_counts.remove(&(left, right));
    }

    Ok(MergeTable::from_parts(alphabet.into_iter().collect(), merges))
}

/// Replaces every left-to-right, non-overlapping occurrence of
/// `(left, right)` with `merged`.
pub(crate) fn merge_pair<T: Copy + PartialEq>(word: &[T], left: T, right: T, merged: T) -> Vec<T> {
    let mut out = Vec::with_capacity(word.len());
    let mut i = 0;
    while i < word.len() {
        if i + 1 < word.len() && word[i] == left && word[i + 1] == right {
            out.push(merged);
            i += 2;
        } else {
            out.push(word[i]);
            i += 1;
        }
    }
    out
}
