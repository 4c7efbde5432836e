//! Deterministic stand-in corpus with handover-like label statistics.
//!
//! Each non-N.A. class owns a disjoint pool of cue words; N.A. words come
//! from a shared filler pool. Class spans are drawn with Zipf-like weights
//! so that a few classes are rare. A small shared pool of ambiguous tokens
//! (numbers, units) appears inside spans of any class, so context matters.
//! Cue pools depend only on the scheme, never on the seed, so corpora drawn
//! with different seeds share a vocabulary.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{LabelScheme, Record, RecordSet, Split};

const FILLER: &[&str] = &[
    "the", "and", "is", "was", "a", "of", "to", "in", "on", "with", "for", "he", "she", "her", "his", "this", "that",
    "has", "had", "been", "at", "from", "so", "just", "also", "there", "now", "then", "ok", "well", "they", "we", "it",
    "be", "are", "um", "going", "said", "all", "very",
];

const AMBIGUOUS: &[&str] = &["2", "10", "mg", "am", "pm", "left", "right", "new"];

const SYLLABLES: &[&str] = &[
    "ka", "lo", "mi", "ne", "ru", "ta", "vo", "zi", "be", "do", "fu", "ga", "hi", "jo", "ku", "li", "ma", "no", "pi",
    "sa", "te", "wu", "ye", "xo",
];

const CUE_POOL_SIZE: usize = 6;
const AMBIGUOUS_RATE: f64 = 0.08;

fn cue_pools(num_classes: usize) -> Vec<Vec<String>> {
    let mut taken: HashSet<String> = FILLER.iter().chain(AMBIGUOUS).map(|s| s.to_string()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_c0de);
    (0..num_classes)
        .map(|_| {
            let mut pool = Vec::with_capacity(CUE_POOL_SIZE);
            while pool.len() < CUE_POOL_SIZE {
                let n = rng.gen_range(2..=4);
                let word: String = (0..n)
                    .map(|_| *SYLLABLES.choose(&mut rng).expect("non-empty"))
                    .collect();
                if taken.insert(word.clone()) {
                    pool.push(word);
                }
            }
            pool
        })
        .collect()
}

/// Generates `n_records` records labelled with `scheme`.
///
/// When `n_records >= scheme.len()` every label occurs at least once:
/// record `i` is forced to contain class `i + 1` for each non-N.A. class.
pub fn generate_synthetic(n_records: usize, scheme: &LabelScheme, seed: u64) -> RecordSet {
    let classes: Vec<usize> = (0..scheme.len()).filter(|&l| l != scheme.na()).collect();
    let pools = cue_pools(classes.len());
    let weights: Vec<f64> = (0..classes.len()).map(|r| 1.0 / (r as f64 + 1.0)).collect();
    let total: f64 = weights.iter().sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut records = Vec::with_capacity(n_records);
    for i in 0..n_records {
        let mut words = Vec::new();
        let mut labels = Vec::new();
        let filler = |rng: &mut ChaCha8Rng, words: &mut Vec<String>, labels: &mut Vec<usize>| {
            for _ in 0..rng.gen_range(1..=4) {
                words.push(FILLER.choose(rng).expect("non-empty").to_string());
                labels.push(scheme.na());
            }
        };
        filler(&mut rng, &mut words, &mut labels);
        let spans = if classes.is_empty() { 0 } else { rng.gen_range(3..=7) };
        let forced = classes.get(i).map(|_| rng.gen_range(0..spans.max(1)));
        for s in 0..spans {
            let k = if forced == Some(s) {
                i
            } else {
                let mut x = rng.gen::<f64>() * total;
                let mut k = 0;
                while k + 1 < weights.len() && x >= weights[k] {
                    x -= weights[k];
                    k += 1;
                }
                k
            };
            for _ in 0..rng.gen_range(1..=3) {
                let word = if rng.gen::<f64>() < AMBIGUOUS_RATE {
                    AMBIGUOUS.choose(&mut rng).expect("non-empty").to_string()
                } else {
                    pools[k].choose(&mut rng).expect("non-empty").clone()
                };
                words.push(word);
                labels.push(classes[k]);
            }
            filler(&mut rng, &mut words, &mut labels);
        }
        records.push(Record::new(format!("syn-{i:05}"), words, labels).expect("generated record is valid"));
    }
    RecordSet::new(Split::Train, records).expect("generated ids are unique")
}
