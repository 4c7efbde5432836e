#![allow(dead_code)]

pub mod bpe;
pub mod crf;

use handover_ie::corpus::{LabelScheme, Record, RecordSet, Split};
use handover_ie::eval::{ClassCounts, Count};

/// Test-set counts per class as (words, tp, fp, fn), in
/// `LabelScheme::handover()` id order (N.A. first).
pub const REFERENCE_COUNTS: [(usize, usize, usize, usize); 36] = [
    (2652, 2090, 370, 562),
    (100, 99, 1, 1),
    (101, 100, 0, 1),
    (281, 280, 32, 1),
    (178, 62, 0, 116),
    (100, 100, 0, 0),
    (198, 190, 6, 8),
    (53, 0, 0, 53),
    (128, 128, 59, 0),
    (153, 146, 341, 7),
    (38, 18, 1, 20),
    (73, 4, 14, 69),
    (206, 5, 110, 201),
    (2, 2, 15, 0),
    (285, 234, 123, 51),
    (43, 7, 172, 36),
    (107, 106, 33, 1),
    (50, 26, 32, 24),
    (25, 20, 34, 5),
    (295, 262, 52, 33),
    (40, 0, 4, 40),
    (188, 62, 156, 126),
    (79, 19, 147, 60),
    (313, 91, 44, 222),
    (1, 0, 0, 1),
    (1, 0, 1, 1),
    (34, 14, 22, 20),
    (39, 17, 12, 22),
    (0, 0, 1, 0),
    (5, 2, 0, 3),
    (296, 120, 65, 176),
    (52, 8, 18, 44),
    (145, 10, 12, 135),
    (28, 8, 8, 20),
    (103, 19, 279, 84),
    (121, 61, 32, 60),
];

/// Reference per-class (precision, recall, f1), same order as `REFERENCE_COUNTS`.
/// The last three heading rows repeat the medication values in the source
/// table and are `None` here.
pub const REFERENCE_PRF: [Option<(f64, f64, f64)>; 36] = [
    Some((0.8496, 0.7881, 0.8177)),
    Some((0.99, 0.99, 0.99)),
    Some((1.0, 0.9901, 0.995)),
    Some((0.8974, 0.9964, 0.9444)),
    Some((1.0, 0.3483, 0.5167)),
    Some((1.0, 1.0, 1.0)),
    Some((0.9694, 0.9596, 0.9645)),
    Some((0.0, 0.0, 0.0)),
    Some((0.6845, 1.0, 0.8127)),
    Some((0.2998, 0.9542, 0.4562)),
    Some((0.9474, 0.4737, 0.6316)),
    Some((0.2222, 0.0548, 0.0879)),
    Some((0.0435, 0.0243, 0.0312)),
    Some((0.1174, 1.0, 0.2105)),
    Some((0.6555, 0.8211, 0.729)),
    Some((0.0391, 0.1628, 0.0631)),
    Some((0.7626, 0.9907, 0.8618)),
    Some((0.4483, 0.52, 0.4815)),
    Some((0.3704, 0.8, 0.5063)),
    Some((0.8344, 0.8881, 0.8604)),
    Some((0.0, 0.0, 0.0)),
    Some((0.2844, 0.3298, 0.3054)),
    Some((0.1145, 0.2405, 0.1551)),
    Some((0.6741, 0.2907, 0.4062)),
    Some((0.0, 0.0, 0.0)),
    Some((0.0, 0.0, 0.0)),
    Some((0.3889, 0.4118, 0.4)),
    Some((0.5862, 0.4359, 0.5)),
    Some((0.0, 0.0, 0.0)),
    Some((1.0, 0.4, 0.5714)),
    Some((0.6486, 0.4054, 0.499)),
    Some((0.3077, 0.1538, 0.2051)),
    Some((0.4545, 0.06897, 0.1198)),
    None,
    None,
    None,
];

/// Reference macro totals (precision, recall, f1).
pub const BERT_MACRO: (f64, f64, f64) = (0.485, 0.477, 0.438);
pub const RANDOM_MACRO: (f64, f64, f64) = (0.018, 0.028, 0.019);
pub const MAJORITY_MACRO: (f64, f64, f64) = (0.000, 0.029, 0.001);
pub const MAJORITY_CLASS: &str = "Future_Goal/TaskToBeCompleted/ExpectedOutcome";

pub const TOLERANCE: f64 = 5e-4;

pub fn reference_counts() -> ClassCounts {
    ClassCounts {
        counts: REFERENCE_COUNTS
            .iter()
            .map(|&(_, tp, fp, fn_)| Count { tp, fp, fn_ })
            .collect(),
    }
}

/// A test set with the reference per-class word totals. Word surfaces are
/// placeholders; only the label histogram matters.
pub fn reference_gold() -> RecordSet {
    let labels: Vec<usize> = REFERENCE_COUNTS
        .iter()
        .enumerate()
        .flat_map(|(id, &(words, ..))| std::iter::repeat_n(id, words))
        .collect();
    let records = labels
        .chunks(100)
        .enumerate()
        .map(|(i, chunk)| Record::new(format!("t{i}"), vec!["w".to_string(); chunk.len()], chunk.to_vec()).unwrap())
        .collect();
    RecordSet::new(Split::Test, records).unwrap()
}

/// One record containing every label of the scheme once.
pub fn every_label_train(scheme: &LabelScheme) -> RecordSet {
    let labels: Vec<usize> = (0..scheme.len()).collect();
    let r = Record::new("all", vec!["w".to_string(); labels.len()], labels).unwrap();
    RecordSet::new(Split::Train, vec![r]).unwrap()
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}
