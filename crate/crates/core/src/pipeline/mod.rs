//! Training loops, hyperparameter search, checkpoints and prediction.

mod adam;
mod checkpoint;
mod config;
mod train;

use std::collections::BTreeSet;
use std::path::Path;

pub use adam::Adam;
pub use checkpoint::{Checkpoint, TrainedModel};
pub use config::{ModelKind, TrainConfig};
pub use train::{
    default_grid, encoder_examples, fine_tune, grid_search, predict_encoder, run_experiment, train_model, EpochStats,
    Example, Experiment, FineTuned, GridResult, LeaderboardEntry, Trained,
};

use crate::corpus::{parse_records, read_records, CorpusError, LabelScheme, RecordSet, Split};
use crate::crf::CrfError;
use crate::encoder::EncoderError;
use crate::eval::EvalError;
use crate::numerics::NumericsError;
use crate::tokenizer::TokenizerError;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("training diverged at epoch {epoch}, step {step}: loss {loss}")]
    Divergence { epoch: usize, step: usize, loss: f64 },
    #[error("checkpoint is incompatible with the data: {0}")]
    Compatibility(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Crf(#[from] CrfError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("{0}: {1}")]
    Io(String, #[source] std::io::Error),
}

impl PipelineError {
    /// True for errors caused by bad inputs rather than by training.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            PipelineError::Config(_)
                | PipelineError::Compatibility(_)
                | PipelineError::Corpus(_)
                | PipelineError::Encoder(EncoderError::Config(_))
                | PipelineError::Eval(EvalError::Alignment(_) | EvalError::UnknownFormat(_))
        )
    }

    pub fn is_divergence(&self) -> bool {
        matches!(
            self,
            PipelineError::Divergence { .. } | PipelineError::Crf(CrfError::Diverged(_))
        )
    }
}

/// The handover scheme when every label belongs to it, otherwise a scheme
/// built from the names.
pub fn scheme_for<'a>(names: impl IntoIterator<Item = &'a str>) -> LabelScheme {
    let names: BTreeSet<&str> = names.into_iter().collect();
    let handover = LabelScheme::handover();
    if names.iter().all(|n| handover.id(n).is_some()) {
        handover
    } else {
        LabelScheme::from_observed(names)
    }
}

/// Reads several TSV files under one label scheme covering all of them.
pub fn read_splits(files: &[(&Path, Split)]) -> Result<(Vec<RecordSet>, LabelScheme), PipelineError> {
    let mut names = BTreeSet::new();
    for (path, split) in files {
        let (_, observed) = read_records(path, *split, None)?;
        names.extend(observed.labels().iter().cloned());
    }
    let scheme = scheme_for(names.iter().map(String::as_str));
    let sets = files
        .iter()
        .map(|(path, split)| read_records(path, *split, Some(&scheme)).map(|(set, _)| set))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((sets, scheme))
}

/// Reads records that must fit an existing scheme, as for prediction with
/// a trained checkpoint. Lines holding only a word are labelled N.A.
pub fn read_for_scheme(path: &Path, split: Split, scheme: &LabelScheme) -> Result<RecordSet, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(|e| PipelineError::Io(path.display().to_string(), e))?;
    let na = scheme.name(scheme.na());
    let text: String = text
        .lines()
        .map(|l| {
            if l.is_empty() || l.starts_with('#') || l.contains('\t') {
                format!("{l}\n")
            } else {
                format!("{l}\t{na}\n")
            }
        })
        .collect();
    match parse_records(text.as_bytes(), split, Some(scheme)) {
        Ok((set, _)) => Ok(set),
        Err(CorpusError::UnknownLabel { line, label }) => Err(PipelineError::Compatibility(format!(
            "{} line {line}: label {label:?} is not in the checkpoint's scheme",
            path.display()
        ))),
        Err(e) => Err(e.into()),
    }
}
