mod common;

use std::collections::BTreeMap;

use common::bpe::{brute_force_merges, classic, random_corpus};
use handover_ie::tokenizer::{align_labels, decode, encode, encode_word, train_bpe, word_frequencies, MergeTable, UNK};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn classic_corpus_pair_count_and_ten_merges() {
    let corpus = classic();
    // (e, s) occurs in newest (6) and widest (3)
    let mut es = 0;
    for (w, c) in &corpus {
        let chars: Vec<char> = w.chars().collect();
        es += chars.windows(2).filter(|p| p == &['e', 's']).count() as u64 * c;
    }
    assert_eq!(es, 9);
    let table = train_bpe(&corpus, 10).unwrap();
    assert_eq!(table.merges()[0], ("e".to_string(), "s".to_string()));
    assert_eq!(table.merges(), brute_force_merges(&corpus, 10).as_slice());
}

#[test]
fn random_corpora_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..50 {
        let corpus = random_corpus(&mut rng);
        let n = rng.gen_range(0..20);
        let fast = train_bpe(&corpus, n).unwrap();
        assert_eq!(fast.merges(), brute_force_merges(&corpus, n).as_slice(), "{corpus:?}");
    }
}

fn total_subtokens(corpus: &BTreeMap<String, u64>, table: &MergeTable) -> u64 {
    corpus.iter().map(|(w, c)| encode_word(w, table).len() as u64 * c).sum()
}

#[test]
fn each_merge_shrinks_the_corpus() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let corpus = random_corpus(&mut rng);
        let full = train_bpe(&corpus, 30).unwrap();
        let mut prev = total_subtokens(&corpus, &train_bpe(&corpus, 0).unwrap());
        for k in 1..=full.merges().len() {
            let t = MergeTable::from_parts(full.alphabet().to_vec(), full.merges()[..k].to_vec());
            let cur = total_subtokens(&corpus, &t);
            assert!(cur < prev, "merge {k} did not shrink: {prev} -> {cur}");
            prev = cur;
        }
    }
}

proptest! {
    #[test]
    fn training_is_deterministic(words in prop::collection::vec("[a-f]{1,6}", 1..15), n in 0usize..25) {
        let freq = word_frequencies(words.iter().map(String::as_str), false);
        let a = train_bpe(&freq, n).unwrap();
        let b = train_bpe(&freq, n).unwrap();
        prop_assert_eq!(a.merges(), b.merges());
        prop_assert_eq!(a.vocab_file(), b.vocab_file());
    }

    #[test]
    fn encode_decode_round_trip(
        train in prop::collection::vec("[a-g]{1,7}", 5..30),
        sentence in prop::collection::vec("[a-g]{1,9}", 10..11),
        n in 0usize..40,
        max_len in 3usize..24,
    ) {
        let freq = word_frequencies(train.iter().map(String::as_str), false);
        let table = train_bpe(&freq, n).unwrap();
        let windows = encode(&sentence, &table, max_len).unwrap();
        for w in &windows {
            prop_assert!(w.len() <= max_len);
            prop_assert!(w.token_ids.iter().all(|&id| id < table.vocab_size()));
        }
        // all training characters present in a-g may not be, so UNK only for unseen chars
        let seen: std::collections::BTreeSet<char> = table.alphabet().iter().copied().collect();
        let unknown_chars = sentence.iter().flat_map(|w| w.chars()).any(|c| !seen.contains(&c));
        let unk = windows.iter().flat_map(|w| &w.token_ids).filter(|&&id| id == UNK).count();
        if !unknown_chars {
            prop_assert_eq!(unk, 0);
            prop_assert_eq!(decode(&windows, &table), sentence.clone());
        }
    }

    #[test]
    fn masked_predictions_cover_every_word(
        words in prop::collection::vec("[a-d]{1,6}", 1..40),
        max_len in 3usize..20,
    ) {
        let freq = word_frequencies(words.iter().map(String::as_str), false);
        let table = train_bpe(&freq, 6).unwrap();
        let labels: Vec<usize> = (0..words.len()).map(|i| i % 3).collect();
        let windows = encode(&words, &table, max_len).unwrap();
        let mut seen = vec![0usize; words.len()];
        let mut read_back = vec![None; words.len()];
        for w in &windows {
            let slice = &labels[w.word_offset..w.word_offset + w.num_words()];
            let aligned = align_labels(w, slice).unwrap();
            for (pos, &m) in aligned.mask.iter().enumerate() {
                if m {
                    let word = w.word_offset + w.word_index_of[pos].unwrap();
                    seen[word] += 1;
                    read_back[word] = aligned.labels[pos];
                }
            }
            prop_assert_eq!(aligned.labels.len(), w.len());
        }
        // first subtokens appear in at least one window; overlap can repeat them
        prop_assert!(seen.iter().all(|&c| c >= 1));
        let merged = handover_ie::tokenizer::merge_window_predictions(
            &windows,
            &windows
                .iter()
                .map(|w| {
                    let slice = &labels[w.word_offset..w.word_offset + w.num_words()];
                    align_labels(w, slice).unwrap().labels.into_iter().map(|l| l.unwrap_or(99)).collect()
                })
                .collect::<Vec<Vec<usize>>>(),
            words.len(),
        );
        prop_assert_eq!(merged.len(), words.len());
        prop_assert_eq!(merged.into_iter().map(Option::unwrap).collect::<Vec<_>>(), labels.clone());
        prop_assert_eq!(read_back.into_iter().map(Option::unwrap).collect::<Vec<_>>(), labels);
    }

    #[test]
    fn word_index_non_decreasing(words in prop::collection::vec("[a-c]{1,5}", 1..30), max_len in 3usize..12) {
        let freq = word_frequencies(words.iter().map(String::as_str), false);
        let table = train_bpe(&freq, 4).unwrap();
        for w in encode(&words, &table, max_len).unwrap() {
            let idx: Vec<usize> = w.word_index_of.iter().flatten().copied().collect();
            prop_assert!(idx.windows(2).all(|p| p[0] <= p[1]));
            prop_assert_eq!(w.word_index_of[0], None);
            prop_assert_eq!(*w.word_index_of.last().unwrap(), None);
        }
    }
}
