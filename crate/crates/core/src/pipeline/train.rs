use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{Adam, Checkpoint, ModelKind, PipelineError, TrainConfig, TrainedModel};
use crate::corpus::{LabelScheme, Record, RecordSet};
use crate::crf::train_crf;
use crate::encoder::{import_pretrained, parse_name_map, EncoderModel, Mode, NameMapping};
use crate::eval::{evaluate, EvalReport, Prf};
use crate::numerics::archive::read_archive;
use crate::numerics::{argmax, ParamSet};
use crate::tokenizer::{align_labels, encode, merge_window_predictions, train_bpe, word_frequencies, MergeTable};

/// One encoder window with a label at each word's first subtoken.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub ids: Vec<usize>,
    pub labels: Vec<Option<usize>>,
}

fn words_of(record: &Record, lowercase: bool) -> Vec<String> {
    if lowercase {
        record.words().iter().map(|w| w.to_lowercase()).collect()
    } else {
        record.words().to_vec()
    }
}

/// Windows of every record, labelled through the alignment mask.
pub fn encoder_examples(
    records: &RecordSet,
    table: &MergeTable,
    max_len: usize,
    lowercase: bool,
) -> Result<Vec<Example>, PipelineError> {
    let mut out = Vec::new();
    for r in records.records() {
        for win in encode(&words_of(r, lowercase), table, max_len)? {
            let span = &r.labels()[win.word_offset..win.word_offset + win.num_words()];
            let aligned = align_labels(&win, span)?;
            let labels: Vec<Option<usize>> = aligned
                .labels
                .iter()
                .zip(&aligned.mask)
                .map(|(&l, &m)| if m { l } else { None })
                .collect();
            if labels.iter().any(Option::is_some) {
                out.push(Example {
                    ids: win.token_ids,
                    labels,
                });
            }
        }
    }
    Ok(out)
}

/// Labels each word from its first subtoken; records run in parallel.
pub fn predict_encoder(
    model: &EncoderModel,
    table: &MergeTable,
    records: &RecordSet,
    max_len: usize,
    lowercase: bool,
    fallback: usize,
) -> Result<RecordSet, PipelineError> {
    let labelled = records
        .records()
        .par_iter()
        .map(|r| {
            let windows = encode(&words_of(r, lowercase), table, max_len)?;
            let mut per_window = Vec::with_capacity(windows.len());
            for win in &windows {
                let log_probs = model.forward(&win.token_ids)?;
                per_window.push(
                    (0..log_probs.rows())
                        .map(|i| argmax(log_probs.row(i)))
                        .collect::<Vec<_>>(),
                );
            }
            let labels = merge_window_predictions(&windows, &per_window, r.len())
                .into_iter()
                .map(|l| l.unwrap_or(fallback))
                .collect();
            Ok(r.relabel(labels)?)
        })
        .collect::<Result<Vec<_>, PipelineError>>()?;
    Ok(RecordSet::new(records.split, labelled)?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean batch loss; for the CRF the final objective; none for the
    /// trivial baselines.
    pub train_loss: Option<f64>,
    pub valid: Prf,
}

#[derive(Clone, Debug)]
pub struct FineTuned {
    pub model: EncoderModel,
    pub history: Vec<EpochStats>,
    /// 1-based epoch whose weights were kept.
    pub best_epoch: usize,
}

/// Mini-batch Adam on the token loss, keeping the weights of the epoch
/// with the best validation macro F1 (the earliest on ties).
pub fn fine_tune(
    mut model: EncoderModel,
    train: &RecordSet,
    valid: &RecordSet,
    scheme: &LabelScheme,
    table: &MergeTable,
    config: &TrainConfig,
) -> Result<FineTuned, PipelineError> {
    if train.is_empty() || valid.is_empty() {
        return Err(PipelineError::Config(
            "training and validation splits must be non-empty".into(),
        ));
    }
    let examples = encoder_examples(train, table, config.max_len, config.lowercase)?;
    if examples.is_empty() {
        return Err(PipelineError::Config("training split has no labelled words".into()));
    }
    let mut order_rng = ChaCha8Rng::seed_from_u64(config.seed);
    order_rng.set_stream(1);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(config.seed);
    dropout_rng.set_stream(2);
    let mut opt = Adam::new(config.learning_rate, config.weight_decay);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, EncoderModel)> = None;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut order_rng);
        let mut epoch_loss = 0.0;
        let batches = order.chunks(config.batch_size);
        let num_batches = batches.len();
        for (step, batch) in batches.enumerate() {
            let targets: usize = batch.iter().map(|&i| examples[i].labels.iter().flatten().count()).sum();
            let mut loss = 0.0;
            let mut mode = Mode::Train(&mut dropout_rng);
            for &i in batch {
                loss += model.forward_backward(&examples[i].ids, &examples[i].labels, targets as f64, &mut mode)?;
            }
            if !loss.is_finite() {
                return Err(PipelineError::Divergence { epoch, step, loss });
            }
            opt.step(&mut model);
            model.zero_grad();
            epoch_loss += loss;
        }
        let pred = predict_encoder(&model, table, valid, config.max_len, config.lowercase, scheme.na())?;
        let report = evaluate(valid, &pred, train, scheme, config.include_na)?;
        let f1 = report.macro_avg.f1;
        history.push(EpochStats {
            epoch,
            train_loss: Some(epoch_loss / num_batches as f64),
            valid: report.macro_avg,
        });
        if best.as_ref().is_none_or(|(b, _, _)| f1 > *b) {
            best = Some((f1, epoch, model.clone()));
        }
    }
    let (_, best_epoch, model) = best.expect("at least one epoch");
    Ok(FineTuned {
        model,
        history,
        best_epoch,
    })
}

fn read_lines(path: &std::path::Path) -> Result<String, PipelineError> {
    std::fs::read_to_string(path).map_err(|e| PipelineError::Io(path.display().to_string(), e))
}

fn initial_encoder(
    config: &TrainConfig,
    table: &MergeTable,
    scheme: &LabelScheme,
) -> Result<EncoderModel, PipelineError> {
    let mut model = EncoderModel::new(config.model_config(table.vocab_size(), scheme.len()), config.seed)?;
    if let Some(path) = &config.pretrained {
        let entries = read_archive(path)?;
        let mapping = match &config.name_map {
            Some(p) => parse_name_map(&read_lines(p)?)?,
            None => {
                let mut names = Vec::new();
                model.visit(&mut |p| names.push(p.name.clone()));
                let present: std::collections::HashSet<&str> = entries.iter().map(|e| e.name.as_str()).collect();
                names
                    .into_iter()
                    .filter(|n| present.contains(n.as_str()))
                    .map(|n| NameMapping {
                        external: n.clone(),
                        internal: n,
                        transpose: false,
                    })
                    .collect()
            }
        };
        let vocab: Option<Vec<String>> = match &config.pretrained_vocab {
            Some(p) => Some(read_lines(p)?.lines().map(str::to_string).collect()),
            None => None,
        };
        import_pretrained(&mut model, entries, &mapping, vocab.as_deref().map(|v| (v, table)))?;
    }
    Ok(model)
}

/// Most frequent non-N.A. training label, lowest id on ties.
fn majority_label(train: &RecordSet, scheme: &LabelScheme) -> usize {
    let mut counts = vec![0usize; scheme.len()];
    for r in train.records() {
        for &l in r.labels() {
            counts[l] += 1;
        }
    }
    (0..scheme.len())
        .filter(|&l| l != scheme.na())
        .max_by(|&a, &b| counts[a].cmp(&counts[b]).then(b.cmp(&a)))
        .unwrap_or(scheme.na())
}

#[derive(Clone, Debug)]
pub struct Trained {
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
}

impl Trained {
    /// Validation metrics of the kept weights.
    pub fn valid(&self) -> Prf {
        self.history[self.best_epoch - 1].valid
    }
}

/// Trains any model kind and scores it on `valid`.
pub fn train_model(
    config: &TrainConfig,
    train: &RecordSet,
    valid: &RecordSet,
    scheme: &LabelScheme,
) -> Result<Trained, PipelineError> {
    config.validate()?;
    train.validate(scheme)?;
    valid.validate(scheme)?;
    if train.is_empty() || valid.is_empty() {
        return Err(PipelineError::Config(
            "training and validation splits must be non-empty".into(),
        ));
    }
    let mut config = config.clone();
    let mut objective = None;
    let (model, tuned) = match config.model {
        ModelKind::Encoder => {
            let words = train
                .records()
                .iter()
                .flat_map(|r| r.words().iter().map(String::as_str));
            let table = train_bpe(&word_frequencies(words, config.lowercase), config.num_merges)?;
            let init = initial_encoder(&config, &table, scheme)?;
            let tuned = fine_tune(init, train, valid, scheme, &table, &config)?;
            let model = TrainedModel::Encoder {
                model: tuned.model.clone(),
                table,
            };
            (model, Some((tuned.history, tuned.best_epoch)))
        }
        ModelKind::Crf => {
            let (model, result) = train_crf(scheme.clone(), train.records(), &config.crf_settings())?;
            objective = Some(result.value);
            (TrainedModel::Crf(model), None)
        }
        ModelKind::Random => (TrainedModel::Random, None),
        ModelKind::Majority => {
            let label = match &config.majority_label {
                Some(name) => scheme
                    .id(name)
                    .ok_or_else(|| PipelineError::Config(format!("majority_label {name:?} is not in the scheme")))?,
                None => majority_label(train, scheme),
            };
            config.majority_label = Some(scheme.name(label).to_string());
            (TrainedModel::Majority(label), None)
        }
    };
    let checkpoint = Checkpoint {
        config,
        scheme: scheme.clone(),
        model,
    };
    let (history, best_epoch) = match tuned {
        Some(t) => t,
        None => {
            let pred = checkpoint.predict(valid)?;
            let report = evaluate(valid, &pred, train, scheme, checkpoint.config.include_na)?;
            let stats = EpochStats {
                epoch: 1,
                train_loss: objective,
                valid: report.macro_avg,
            };
            (vec![stats], 1)
        }
    };
    Ok(Trained {
        checkpoint,
        history,
        best_epoch,
    })
}

/// Learning rate × batch size × epochs over `base`.
pub fn default_grid(base: &TrainConfig) -> Vec<TrainConfig> {
    let mut grid = Vec::new();
    for learning_rate in [5e-5, 3e-5, 2e-5] {
        for batch_size in [8, 16] {
            for epochs in [3, 4, 5] {
                grid.push(TrainConfig {
                    learning_rate,
                    batch_size,
                    epochs,
                    ..base.clone()
                });
            }
        }
    }
    grid
}

#[derive(Clone, Debug)]
pub struct LeaderboardEntry {
    pub config: TrainConfig,
    pub valid: Prf,
    pub best_epoch: usize,
}

#[derive(Clone, Debug)]
pub struct GridResult {
    pub best: TrainConfig,
    /// Non-increasing in validation macro F1.
    pub leaderboard: Vec<LeaderboardEntry>,
}

/// Trains every configuration (in parallel) and ranks them by validation
/// macro F1; ties go to the smaller learning rate, then fewer epochs.
pub fn grid_search(
    grid: &[TrainConfig],
    train: &RecordSet,
    valid: &RecordSet,
    scheme: &LabelScheme,
) -> Result<GridResult, PipelineError> {
    if grid.is_empty() {
        return Err(PipelineError::Config("empty hyperparameter grid".into()));
    }
    let mut leaderboard = grid
        .par_iter()
        .map(|config| {
            let t = train_model(config, train, valid, scheme)?;
            Ok(LeaderboardEntry {
                config: config.clone(),
                valid: t.valid(),
                best_epoch: t.best_epoch,
            })
        })
        .collect::<Result<Vec<_>, PipelineError>>()?;
    leaderboard.sort_by(|a, b| {
        b.valid
            .f1
            .total_cmp(&a.valid.f1)
            .then(a.config.learning_rate.total_cmp(&b.config.learning_rate))
            .then(a.config.epochs.cmp(&b.config.epochs))
    });
    Ok(GridResult {
        best: leaderboard[0].config.clone(),
        leaderboard,
    })
}

#[derive(Clone, Debug)]
pub struct Experiment {
    pub trained: Trained,
    pub predictions: RecordSet,
    pub report: EvalReport,
}

/// Train on `train`, select on `valid`, then predict and score `test`.
pub fn run_experiment(
    config: &TrainConfig,
    train: &RecordSet,
    valid: &RecordSet,
    test: &RecordSet,
    scheme: &LabelScheme,
) -> Result<Experiment, PipelineError> {
    let trained = train_model(config, train, valid, scheme)?;
    let predictions = trained.checkpoint.predict(test)?;
    let report = evaluate(test, &predictions, train, scheme, config.include_na)?;
    Ok(Experiment {
        trained,
        predictions,
        report,
    })
}
