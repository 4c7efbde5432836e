//! Linear-chain CRF over word-window indicator features.
//!
//! Weight layout follows CRF++: observation `o` paired with label `y` lives
//! in slot `o * Y + y`, and the `Y × Y` transition block follows all
//! observation slots.

mod features;
mod inference;
pub mod lbfgs;

use std::fs;
use std::io::BufReader;
use std::path::Path;

use rayon::prelude::*;

pub use features::{FeatureIndex, FeatureTemplateSet, Template, BIGRAM_TEMPLATE, BOS, CONJUNCTION, EOS};
pub use inference::{log_partition, marginals, viterbi, Marginals, Scores};
pub use lbfgs::{LbfgsError, LbfgsResult, LbfgsSettings, Termination};

use crate::corpus::{CorpusError, LabelScheme, Record};
use crate::numerics::archive::{read_archive, write_archive};
use crate::numerics::{ArchiveEntry, NumericsError, Tensor};

/// Records per work unit in the parallel gradient. Partial sums are added in
/// chunk order, so results do not depend on the thread count.
const CHUNK: usize = 32;

#[derive(Debug, thiserror::Error)]
pub enum CrfError {
    #[error("no training records")]
    EmptyTrainingSet,
    #[error("training diverged: {0}")]
    Diverged(#[from] LbfgsError),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("model file {file} line {line}: {message}")]
    Format {
        file: &'static str,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("{0}: {1}")]
    Io(String, #[source] std::io::Error),
}

#[derive(Clone, Debug, PartialEq)]
pub struct CrfSettings {
    pub l2_lambda: f64,
    /// Minimum number of occurrences for a feature to be indexed.
    pub min_feature_count: usize,
    pub optimizer: LbfgsSettings,
}

impl Default for CrfSettings {
    fn default() -> Self {
        Self {
            l2_lambda: 1.0,
            min_feature_count: 1,
            optimizer: LbfgsSettings::default(),
        }
    }
}

/// A sequence prepared for training: observation ids per position and the
/// gold labels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Instance {
    pub observations: Vec<Vec<usize>>,
    pub labels: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CrfModel {
    pub labels: LabelScheme,
    pub templates: FeatureTemplateSet,
    pub index: FeatureIndex,
    pub weights: Vec<f64>,
    pub l2_lambda: f64,
}

impl CrfModel {
    /// A zero-weight model whose feature index is built from `train`.
    pub fn new(labels: LabelScheme, train: &[Record], settings: &CrfSettings) -> Self {
        let templates = FeatureTemplateSet::standard();
        let index = FeatureIndex::build(&templates, train.iter().map(Record::words), settings.min_feature_count);
        let dim = (index.len() + labels.len()) * labels.len();
        Self {
            labels,
            templates,
            index,
            weights: vec![0.0; dim],
            l2_lambda: settings.l2_lambda,
        }
    }

    pub fn num_labels(&self) -> usize {
        self.labels.len()
    }

    pub fn unary_slot(&self, observation: usize, label: usize) -> usize {
        observation * self.num_labels() + label
    }

    pub fn transition_slot(&self, from: usize, to: usize) -> usize {
        let y = self.num_labels();
        (self.index.len() + from) * y + to
    }

    pub fn instance(&self, record: &Record) -> Instance {
        Instance {
            observations: self.index.observations(&self.templates, record.words()),
            labels: record.labels().to_vec(),
        }
    }

    pub fn scores(&self, observations: &[Vec<usize>]) -> Scores {
        scores_from(&self.weights, observations, self.index.len(), self.num_labels())
    }

    pub fn predict<S: AsRef<str>>(&self, words: &[S]) -> Vec<usize> {
        viterbi(&self.scores(&self.index.observations(&self.templates, words)))
    }

    /// Fits the weights with L-BFGS, starting from the current weights.
    pub fn fit(&mut self, records: &[Record], optimizer: &LbfgsSettings) -> Result<LbfgsResult, CrfError> {
        if records.is_empty() {
            return Err(CrfError::EmptyTrainingSet);
        }
        let instances: Vec<Instance> = records.iter().map(|r| self.instance(r)).collect();
        let (features, y, lambda) = (self.index.len(), self.num_labels(), self.l2_lambda);
        let result = lbfgs::minimize(self.weights.clone(), optimizer, |w| {
            nll_and_grad_raw(w, &instances, features, y, lambda)
        })?;
        self.weights = result.x.clone();
        Ok(result)
    }

    /// Writes `labels.txt`, `features.tsv` and `weights.tarch` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), CrfError> {
        let io = |p: &Path, e| CrfError::Io(p.display().to_string(), e);
        let p = dir.join("labels.txt");
        fs::write(&p, self.labels.to_file_string()).map_err(|e| io(&p, e))?;
        let p = dir.join("features.tsv");
        fs::write(&p, self.feature_table()).map_err(|e| io(&p, e))?;
        let mut entries = vec![ArchiveEntry::f64("weights", Tensor::vector(self.weights.clone()))];
        entries.push(ArchiveEntry::f64("l2_lambda", Tensor::vector(vec![self.l2_lambda])));
        write_archive(&dir.join("weights.tarch"), &entries)?;
        Ok(())
    }

    /// `template<TAB>surface<TAB>label<TAB>slot` for every weight. The
    /// surface of a transition row is the previous label.
    pub fn feature_table(&self) -> String {
        let mut out = String::new();
        let names = self.labels.labels();
        for o in 0..self.index.len() {
            let (t, surface) = self.index.entry(o);
            let tpl = self.templates.templates()[t].name;
            for (y, name) in names.iter().enumerate() {
                out.push_str(&format!("{tpl}\t{surface}\t{name}\t{}\n", self.unary_slot(o, y)));
            }
        }
        for (a, from) in names.iter().enumerate() {
            for (b, to) in names.iter().enumerate() {
                out.push_str(&format!(
                    "{BIGRAM_TEMPLATE}\t{from}\t{to}\t{}\n",
                    self.transition_slot(a, b)
                ));
            }
        }
        out
    }

    pub fn load(dir: &Path) -> Result<Self, CrfError> {
        let io = |p: &Path, e| CrfError::Io(p.display().to_string(), e);
        let p = dir.join("labels.txt");
        let labels = LabelScheme::parse(BufReader::new(fs::File::open(&p).map_err(|e| io(&p, e))?))?;
        let p = dir.join("features.tsv");
        let table = fs::read_to_string(&p).map_err(|e| io(&p, e))?;
        let templates = FeatureTemplateSet::standard();
        let index = parse_feature_table(&table, &templates, &labels)?;
        let mut weights = None;
        let mut l2_lambda = CrfSettings::default().l2_lambda;
        for e in read_archive(&dir.join("weights.tarch"))? {
            match e.name.as_str() {
                "weights" => weights = Some(e.tensor.into_data()),
                "l2_lambda" => l2_lambda = e.tensor.data().first().copied().unwrap_or(l2_lambda),
                _ => {}
            }
        }
        let weights = weights.ok_or_else(|| CrfError::Format {
            file: "weights",
            line: 0,
            message: "archive has no `weights` tensor".into(),
        })?;
        let expected = (index.len() + labels.len()) * labels.len();
        if weights.len() != expected {
            return Err(CrfError::Dimension(format!(
                "{} weights for {expected} feature slots",
                weights.len()
            )));
        }
        Ok(Self {
            labels,
            templates,
            index,
            weights,
            l2_lambda,
        })
    }
}

fn parse_feature_table(
    text: &str,
    templates: &FeatureTemplateSet,
    labels: &LabelScheme,
) -> Result<FeatureIndex, CrfError> {
    let y = labels.len();
    let mut index = FeatureIndex::default();
    let mut transitions = 0;
    for (n, line) in text.lines().enumerate() {
        let bad = |message: String| CrfError::Format {
            file: "features",
            line: n + 1,
            message,
        };
        let cols: Vec<&str> = line.split('\t').collect();
        let [tpl, surface, label, slot] = cols[..] else {
            return Err(bad(format!("expected 4 tab-separated columns, found {}", cols.len())));
        };
        let slot: usize = slot
            .parse()
            .map_err(|_| bad(format!("slot {slot:?} is not an integer")))?;
        let label = labels
            .id(label)
            .ok_or_else(|| bad(format!("unknown label {label:?}")))?;
        let want = if tpl == BIGRAM_TEMPLATE {
            let from = labels
                .id(surface)
                .ok_or_else(|| bad(format!("unknown label {surface:?}")))?;
            transitions += 1;
            (index.len() + from) * y + label
        } else {
            if transitions > 0 {
                return Err(bad("observation row after transition rows".into()));
            }
            let t = templates
                .template_id(tpl)
                .ok_or_else(|| bad(format!("unknown template {tpl:?}")))?;
            index.push((t, surface.to_string())) * y + label
        };
        if slot != want {
            return Err(bad(format!("slot {slot} but layout implies {want}")));
        }
    }
    if transitions != y * y {
        return Err(CrfError::Format {
            file: "features",
            line: 0,
            message: format!("{transitions} transition rows for {y} labels"),
        });
    }
    Ok(index)
}

fn scores_from(w: &[f64], observations: &[Vec<usize>], features: usize, y: usize) -> Scores {
    let mut s = Scores::zeros(observations.len(), y);
    for (t, obs) in observations.iter().enumerate() {
        let row = s.unary.row_mut(t);
        for &o in obs {
            for (r, v) in row.iter_mut().zip(&w[o * y..(o + 1) * y]) {
                *r += v;
            }
        }
    }
    s.transition
        .data_mut()
        .copy_from_slice(&w[features * y..(features + y) * y]);
    s
}

fn add_instance(w: &[f64], inst: &Instance, features: usize, y: usize, grad: &mut [f64]) -> f64 {
    if inst.labels.is_empty() {
        return 0.0;
    }
    let s = scores_from(w, &inst.observations, features, y);
    let m = marginals(&s);
    let trans = features * y;
    for (t, obs) in inst.observations.iter().enumerate() {
        let gold = inst.labels[t];
        for &o in obs {
            for (k, g) in grad[o * y..(o + 1) * y].iter_mut().enumerate() {
                *g += m.unary.get(t, k);
            }
            grad[o * y + gold] -= 1.0;
        }
    }
    for (t, p) in m.pairwise.iter().enumerate() {
        for (g, v) in grad[trans..].iter_mut().zip(p.data()) {
            *g += v;
        }
        grad[trans + inst.labels[t] * y + inst.labels[t + 1]] -= 1.0;
    }
    m.log_partition - s.path_score(&inst.labels)
}

fn nll_and_grad_raw(w: &[f64], instances: &[Instance], features: usize, y: usize, lambda: f64) -> (f64, Vec<f64>) {
    let partials: Vec<(f64, Vec<f64>)> = instances
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut grad = vec![0.0; w.len()];
            let loss = chunk
                .iter()
                .map(|inst| add_instance(w, inst, features, y, &mut grad))
                .sum();
            (loss, grad)
        })
        .collect();
    let mut loss = 0.5 * lambda * w.iter().map(|v| v * v).sum::<f64>();
    let mut grad: Vec<f64> = w.iter().map(|v| lambda * v).collect();
    for (l, g) in partials {
        loss += l;
        grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
    }
    (loss, grad)
}

/// Penalized negative log-likelihood of `instances` and its gradient with
/// respect to `model.weights`.
pub fn nll_and_grad(model: &CrfModel, instances: &[Instance]) -> (f64, Vec<f64>) {
    nll_and_grad_raw(
        &model.weights,
        instances,
        model.index.len(),
        model.num_labels(),
        model.l2_lambda,
    )
}

/// Builds a scheme from the training labels, indexes features and fits.
pub fn train_crf(
    labels: LabelScheme,
    train: &[Record],
    settings: &CrfSettings,
) -> Result<(CrfModel, LbfgsResult), CrfError> {
    let mut model = CrfModel::new(labels, train, settings);
    let result = model.fit(train, &settings.optimizer)?;
    Ok((model, result))
}

/// Composes source label weights with a `[S × T]` label mapping.
///
/// Unary weights become `W · M` row by row over the target feature index
/// (features unknown to the source start at 0) and transitions become
/// `Mᵀ · A · M`.
pub fn tl_init(source: &CrfModel, target: &CrfModel, mapping: &Tensor) -> Result<Vec<f64>, CrfError> {
    let (s, t) = (source.num_labels(), target.num_labels());
    if mapping.shape() != [s, t] {
        return Err(CrfError::Dimension(format!(
            "mapping is {:?}, expected [{s}, {t}]",
            mapping.shape()
        )));
    }
    let mut out = vec![0.0; target.weights.len()];
    for o in 0..target.index.len() {
        let (tpl, surface) = target.index.entry(o);
        let Some(src) = source.index.get(tpl, surface) else {
            continue;
        };
        let w = &source.weights[src * s..(src + 1) * s];
        for j in 0..t {
            out[o * t + j] = (0..s).map(|i| w[i] * mapping.get(i, j)).sum();
        }
    }
    let a = Tensor::new(vec![s, s], source.weights[source.index.len() * s..].to_vec())?;
    let am = crate::numerics::ops::matmul(&a, mapping)?;
    let composed = crate::numerics::ops::matmul_tn(mapping, &am)?;
    let base = target.index.len() * t;
    out[base..].copy_from_slice(composed.data());
    Ok(out)
}
