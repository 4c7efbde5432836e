use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Record, RecordSet};

/// Relabels every word with a label drawn uniformly from `labels`.
///
/// Panics if `labels` is empty.
pub fn baseline_random(records: &RecordSet, labels: &[usize], seed: u64) -> RecordSet {
    assert!(!labels.is_empty(), "random baseline needs at least one label");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    relabel(records, |r| {
        r.words()
            .iter()
            .map(|_| *labels.choose(&mut rng).expect("non-empty"))
            .collect()
    })
}

/// Relabels every word with `label`.
pub fn baseline_majority(records: &RecordSet, label: usize) -> RecordSet {
    relabel(records, |r| vec![label; r.len()])
}

fn relabel(records: &RecordSet, mut f: impl FnMut(&Record) -> Vec<usize>) -> RecordSet {
    let out = records
        .records()
        .iter()
        .map(|r| r.relabel(f(r)).expect("one label per word"))
        .collect();
    RecordSet::new(records.split, out).expect("ids already unique")
}
