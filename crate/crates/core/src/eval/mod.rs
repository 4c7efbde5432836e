//! Word-level confusion counts, per-class and macro metrics, baselines and
//! report rendering.

mod baseline;
mod emit;

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use baseline::{baseline_majority, baseline_random};
pub use emit::{emit_report, parse_csv_report, parse_json_report, ReportFormat};

use crate::corpus::{evaluated_classes, LabelScheme, MainCategory, RecordSet};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("alignment: {0}")]
    Alignment(String),
    #[error("the evaluated class set is empty")]
    EmptyClassSet,
    #[error("unknown report format {0:?} (expected table, csv or json)")]
    UnknownFormat(String),
    #[error("report parse error: {0}")]
    Parse(String),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Count {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Count {
    /// Gold words of the class.
    pub fn words(&self) -> usize {
        self.tp + self.fn_
    }

    fn add(&mut self, other: &Count) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }

    pub fn prf(&self) -> Prf {
        prf_from_counts(self.tp, self.fp, self.fn_)
    }
}

/// Per-label counts, indexed by label id.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ClassCounts {
    pub counts: Vec<Count>,
}

impl ClassCounts {
    pub fn get(&self, label: usize) -> Count {
        self.counts.get(label).copied().unwrap_or_default()
    }

    fn merge(mut self, other: ClassCounts) -> ClassCounts {
        if self.counts.len() < other.counts.len() {
            self.counts.resize(other.counts.len(), Count::default());
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            a.add(b);
        }
        self
    }
}

/// Counts every word once: a hit is a true positive of its class, a miss
/// is a false negative of the gold class and a false positive of the
/// predicted one.
pub fn confusion_counts(gold: &RecordSet, pred: &RecordSet, num_labels: usize) -> Result<ClassCounts, EvalError> {
    if gold.len() != pred.len() {
        return Err(EvalError::Alignment(format!(
            "{} gold records but {} predicted",
            gold.len(),
            pred.len()
        )));
    }
    for (g, p) in gold.records().iter().zip(pred.records()) {
        if g.id() != p.id() || g.len() != p.len() {
            return Err(EvalError::Alignment(format!(
                "gold record {:?} ({} words) does not match predicted record {:?} ({} words)",
                g.id(),
                g.len(),
                p.id(),
                p.len()
            )));
        }
        if let Some(&bad) = g.labels().iter().chain(p.labels()).find(|&&l| l >= num_labels) {
            return Err(EvalError::Alignment(format!(
                "label id {bad} outside {num_labels} labels"
            )));
        }
    }
    let empty = || ClassCounts {
        counts: vec![Count::default(); num_labels],
    };
    Ok(gold
        .records()
        .par_iter()
        .zip(pred.records().par_iter())
        .map(|(g, p)| {
            let mut c = empty();
            for (&gl, &pl) in g.labels().iter().zip(p.labels()) {
                if gl == pl {
                    c.counts[gl].tp += 1;
                } else {
                    c.counts[gl].fn_ += 1;
                    c.counts[pl].fp += 1;
                }
            }
            c
        })
        .reduce(empty, ClassCounts::merge))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Precision, recall and F1; any 0/0 is 0.
pub fn prf_from_counts(tp: usize, fp: usize, fn_: usize) -> Prf {
    let precision = ratio(tp as f64, (tp + fp) as f64);
    let recall = ratio(tp as f64, (tp + fn_) as f64);
    let f1 = ratio(2.0 * precision * recall, precision + recall);
    Prf { precision, recall, f1 }
}

/// Unweighted mean of each metric. F1 is the mean of the per-class F1
/// values, not the harmonic mean of the macro precision and recall.
pub fn macro_average(metrics: &[Prf]) -> Result<Prf, EvalError> {
    if metrics.is_empty() {
        return Err(EvalError::EmptyClassSet);
    }
    let n = metrics.len() as f64;
    Ok(Prf {
        precision: metrics.iter().map(|m| m.precision).sum::<f64>() / n,
        recall: metrics.iter().map(|m| m.recall).sum::<f64>() / n,
        f1: metrics.iter().map(|m| m.f1).sum::<f64>() / n,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub class: String,
    pub category: MainCategory,
    #[serde(flatten)]
    pub count: Count,
    #[serde(flatten)]
    pub metrics: Prf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoryReport {
    pub category: MainCategory,
    #[serde(flatten)]
    pub count: Count,
    #[serde(flatten)]
    pub metrics: Prf,
}

/// Per-class metrics for every reported class (label-id order) and their
/// macro average over `evaluated`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub classes: Vec<ClassReport>,
    /// Classes whose metrics enter the macro average.
    pub evaluated: Vec<String>,
    #[serde(rename = "macro")]
    pub macro_avg: Prf,
    /// Counts pooled over the reported classes of each heading.
    pub categories: Vec<CategoryReport>,
}

impl EvalReport {
    /// Reports every class in `classes`. The macro average covers the same
    /// set, minus N.A. unless `include_na`.
    pub fn from_counts(
        counts: &ClassCounts,
        scheme: &LabelScheme,
        classes: &BTreeSet<usize>,
        include_na: bool,
    ) -> Result<Self, EvalError> {
        let classes: Vec<ClassReport> = classes
            .iter()
            .map(|&id| {
                let count = counts.get(id);
                ClassReport {
                    class: scheme.name(id).to_string(),
                    category: scheme.category(id),
                    count,
                    metrics: count.prf(),
                }
            })
            .collect();
        let in_macro: Vec<&ClassReport> = classes
            .iter()
            .filter(|c| include_na || c.category != MainCategory::NotApplicable)
            .collect();
        let macro_avg = macro_average(&in_macro.iter().map(|c| c.metrics).collect::<Vec<_>>())?;
        let evaluated = in_macro.iter().map(|c| c.class.clone()).collect();
        let categories = MainCategory::ALL
            .iter()
            .filter_map(|&cat| {
                let members: Vec<&ClassReport> = classes.iter().filter(|c| c.category == cat).collect();
                if members.is_empty() {
                    return None;
                }
                let mut count = Count::default();
                members.iter().for_each(|c| count.add(&c.count));
                Some(CategoryReport {
                    category: cat,
                    count,
                    metrics: count.prf(),
                })
            })
            .collect();
        Ok(Self {
            classes,
            evaluated,
            macro_avg,
            categories,
        })
    }

    pub fn class(&self, name: &str) -> Option<&ClassReport> {
        self.classes.iter().find(|c| c.class == name)
    }

    pub fn category(&self, cat: MainCategory) -> Option<&CategoryReport> {
        self.categories.iter().find(|c| c.category == cat)
    }

    pub fn includes_na(&self) -> bool {
        self.evaluated.iter().any(|name| {
            self.class(name)
                .is_some_and(|c| c.category == MainCategory::NotApplicable)
        })
    }
}

/// Evaluates `pred` against `gold`, reporting the classes present in
/// `train`. N.A. is reported but enters the macro average only with
/// `include_na`.
pub fn evaluate(
    gold: &RecordSet,
    pred: &RecordSet,
    train: &RecordSet,
    scheme: &LabelScheme,
    include_na: bool,
) -> Result<EvalReport, EvalError> {
    let counts = confusion_counts(gold, pred, scheme.len())?;
    EvalReport::from_counts(&counts, scheme, &evaluated_classes(train, scheme), include_na)
}
