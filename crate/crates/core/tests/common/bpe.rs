use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Reference BPE trainer: recounts every pair from scratch each iteration.
pub fn brute_force_merges(corpus: &BTreeMap<String, u64>, num_merges: usize) -> Vec<(String, String)> {
    let mut words: Vec<(Vec<String>, u64)> = corpus
        .iter()
        .map(|(w, &c)| (w.chars().map(String::from).collect(), c))
        .collect();
    let mut merges = Vec::new();
    for _ in 0..num_merges {
        let mut counts: BTreeMap<(String, String), u64> = BTreeMap::new();
        for (syms, c) in &words {
            for p in syms.windows(2) {
                *counts.entry((p[0].clone(), p[1].clone())).or_default() += c;
            }
        }
        let mut best: Option<(&(String, String), u64)> = None;
        for (pair, &c) in &counts {
            if best.is_none_or(|(_, bc)| c > bc) {
                best = Some((pair, c));
            }
        }
        let Some(((l, r), _)) = best else { break };
        let (l, r) = (l.clone(), r.clone());
        for (syms, _) in &mut words {
            let mut out = Vec::new();
            let mut i = 0;
            while i < syms.len() {
                if i + 1 < syms.len() && syms[i] == l && syms[i + 1] == r {
                    out.push(format!("{l}{r}"));
                    i += 2;
                } else {
                    out.push(syms[i].clone());
                    i += 1;
                }
            }
            *syms = out;
        }
        merges.push((l, r));
    }
    merges
}

pub fn random_corpus(rng: &mut ChaCha8Rng) -> BTreeMap<String, u64> {
    let alphabet: Vec<char> = "abcde".chars().collect();
    let n_words = rng.gen_range(1..12);
    let mut corpus = BTreeMap::new();
    for _ in 0..n_words {
        let len = rng.gen_range(1..8);
        let w: String = (0..len).map(|_| alphabet[rng.gen_range(0..alphabet.len())]).collect();
        *corpus.entry(w).or_insert(0) += rng.gen_range(1..6);
    }
    corpus
}

pub fn classic() -> BTreeMap<String, u64> {
    [("low", 5), ("lower", 2), ("newest", 6), ("widest", 3)]
        .into_iter()
        .map(|(w, c)| (w.to_string(), c))
        .collect()
}
