use std::fs;
use std::path::Path;

use handover_ie::corpus::{generate_synthetic, serialize_records, LabelScheme, Record, RecordSet, Split};
use handover_ie::encoder::EncoderModel;
use handover_ie::eval::{emit_report, ReportFormat};
use handover_ie::numerics::ParamSet;
use handover_ie::pipeline::{
    grid_search, read_for_scheme, run_experiment, train_model, Checkpoint, ModelKind, PipelineError, TrainConfig,
    TrainedModel,
};

fn small_scheme() -> LabelScheme {
    let all = LabelScheme::handover();
    LabelScheme::new(all.labels()[..8].to_vec()).unwrap()
}

fn overfit_config() -> TrainConfig {
    TrainConfig {
        model: ModelKind::Encoder,
        learning_rate: 3e-3,
        batch_size: 4,
        epochs: 30,
        seed: 5,
        max_len: 96,
        num_merges: 300,
        num_layers: 2,
        hidden_size: 32,
        num_heads: 2,
        ffn_size: 64,
        dropout: 0.0,
        ..Default::default()
    }
}

fn word_accuracy(gold: &RecordSet, pred: &RecordSet) -> f64 {
    let (mut hit, mut total) = (0, 0);
    for (g, p) in gold.records().iter().zip(pred.records()) {
        hit += g.labels().iter().zip(p.labels()).filter(|(a, b)| a == b).count();
        total += g.len();
    }
    hit as f64 / total as f64
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

#[test]
fn tiny_encoder_overfits_twenty_records() {
    let scheme = small_scheme();
    let train = generate_synthetic(20, &scheme, 1);
    let t = train_model(&overfit_config(), &train, &train, &scheme).unwrap();
    let pred = t.checkpoint.predict(&train).unwrap();
    let acc = word_accuracy(&train, &pred);
    assert!(acc >= 0.99, "training accuracy {acc}");
    // the kept epoch is the best one seen
    let best = t.history.iter().map(|h| h.valid.f1).fold(f64::MIN, f64::max);
    assert_eq!(t.valid().f1, best);
}

#[test]
fn zero_learning_rate_keeps_initial_weights() {
    let scheme = small_scheme();
    let train = generate_synthetic(6, &scheme, 2);
    let config = TrainConfig {
        learning_rate: 0.0,
        epochs: 1,
        ..overfit_config()
    };
    let t = train_model(&config, &train, &train, &scheme).unwrap();
    let TrainedModel::Encoder { model, .. } = &t.checkpoint.model else {
        panic!("encoder expected")
    };
    let init = EncoderModel::new(model.config.clone(), config.seed).unwrap();
    assert_eq!(model.flat_values(), init.flat_values());
}

#[test]
fn identical_seeds_give_identical_checkpoints_and_reports() {
    let scheme = small_scheme();
    let train = generate_synthetic(12, &scheme, 3);
    let test = generate_synthetic(5, &scheme, 4);
    let config = TrainConfig {
        epochs: 3,
        dropout: 0.1,
        ..overfit_config()
    };
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut outputs = Vec::new();
    for d in &dirs {
        let e = run_experiment(&config, &train, &train, &test, &scheme).unwrap();
        e.trained.checkpoint.save(d.path()).unwrap();
        outputs.push((
            emit_report(&e.report, ReportFormat::Json),
            serialize_records(&e.predictions, &scheme),
        ));
    }
    assert_eq!(dir_bytes(dirs[0].path()), dir_bytes(dirs[1].path()));
    assert_eq!(outputs[0], outputs[1]);

    let other = TrainConfig { seed: 6, ..config };
    let e = run_experiment(&other, &train, &train, &test, &scheme).unwrap();
    let d = tempfile::tempdir().unwrap();
    e.trained.checkpoint.save(d.path()).unwrap();
    assert_ne!(dir_bytes(d.path()), dir_bytes(dirs[0].path()));
}

#[test]
fn checkpoint_round_trip_predicts_identically() {
    let scheme = small_scheme();
    let train = generate_synthetic(10, &scheme, 7);
    let test = generate_synthetic(6, &scheme, 8);
    for model in [
        ModelKind::Encoder,
        ModelKind::Crf,
        ModelKind::Random,
        ModelKind::Majority,
    ] {
        let config = TrainConfig {
            model,
            epochs: 2,
            ..overfit_config()
        };
        let t = train_model(&config, &train, &train, &scheme).unwrap();
        let dir = tempfile::tempdir().unwrap();
        t.checkpoint.save(dir.path()).unwrap();
        let loaded = Checkpoint::load(dir.path()).unwrap();
        assert_eq!(loaded, t.checkpoint, "{model}");
        let before = t.checkpoint.predict(&test).unwrap();
        assert_eq!(loaded.predict(&test).unwrap(), before, "{model}");
        assert_eq!(loaded.predict(&test).unwrap(), before, "{model}");
        for (a, b) in before.records().iter().zip(test.records()) {
            assert_eq!(a.words(), b.words());
        }
        assert!(loaded.predict(&RecordSet::empty(Split::Test)).unwrap().is_empty());
    }
}

#[test]
fn grid_ranks_by_f1_then_learning_rate_then_epochs() {
    let scheme = small_scheme();
    let train = generate_synthetic(10, &scheme, 9);
    // the random baseline ignores these settings, so every entry ties
    let base = TrainConfig {
        model: ModelKind::Random,
        ..Default::default()
    };
    let grid: Vec<TrainConfig> = [(5e-5, 5), (2e-5, 4), (2e-5, 3), (3e-5, 3)]
        .into_iter()
        .map(|(learning_rate, epochs)| TrainConfig {
            learning_rate,
            epochs,
            ..base.clone()
        })
        .collect();
    let g = grid_search(&grid, &train, &train, &scheme).unwrap();
    let order: Vec<(f64, usize)> = g
        .leaderboard
        .iter()
        .map(|e| (e.config.learning_rate, e.config.epochs))
        .collect();
    assert_eq!(order, vec![(2e-5, 3), (2e-5, 4), (3e-5, 3), (5e-5, 5)]);
    assert_eq!(g.best, grid[2]);

    let single = grid_search(&grid[..1], &train, &train, &scheme).unwrap();
    assert_eq!(single.best, grid[0]);
    assert!(matches!(
        grid_search(&[], &train, &train, &scheme),
        Err(PipelineError::Config(_))
    ));
}

#[test]
fn grid_with_an_overfitting_config_beats_random() {
    let scheme = small_scheme();
    let train = generate_synthetic(20, &scheme, 1);
    let random = TrainConfig {
        model: ModelKind::Random,
        ..Default::default()
    };
    let g = grid_search(&[random, overfit_config()], &train, &train, &scheme).unwrap();
    assert_eq!(g.best.model, ModelKind::Encoder);
    assert!(g.leaderboard[0].valid.f1 > g.leaderboard[1].valid.f1);
    assert!(g.leaderboard.windows(2).all(|w| w[0].valid.f1 >= w[1].valid.f1));
}

#[test]
fn crf_beats_trivial_baselines() {
    let scheme = LabelScheme::handover();
    let train = generate_synthetic(200, &scheme, 11);
    let valid = generate_synthetic(40, &scheme, 12);
    let test = generate_synthetic(60, &scheme, 13);
    let f1 = |model| {
        let config = TrainConfig {
            model,
            crf_max_iterations: 100,
            ..Default::default()
        };
        run_experiment(&config, &train, &valid, &test, &scheme)
            .unwrap()
            .report
            .macro_avg
            .f1
    };
    let crf = f1(ModelKind::Crf);
    let random = f1(ModelKind::Random);
    let majority = f1(ModelKind::Majority);
    assert!(
        crf >= random + 0.2 && crf >= majority + 0.2,
        "crf {crf}, random {random}, majority {majority}"
    );
}

#[test]
fn huge_learning_rate_diverges() {
    let scheme = small_scheme();
    let train = generate_synthetic(8, &scheme, 14);
    let config = TrainConfig {
        learning_rate: 1e300,
        epochs: 3,
        ..overfit_config()
    };
    let err = train_model(&config, &train, &train, &scheme).unwrap_err();
    assert!(err.is_divergence(), "{err}");
}

#[test]
fn pretrained_weights_are_imported() {
    let scheme = small_scheme();
    let train = generate_synthetic(6, &scheme, 15);
    let config = TrainConfig {
        learning_rate: 0.0,
        epochs: 1,
        ..overfit_config()
    };
    let shape = {
        let t = train_model(&config, &train, &train, &scheme).unwrap();
        let TrainedModel::Encoder { model, .. } = t.checkpoint.model else {
            panic!()
        };
        model.config
    };
    let source = EncoderModel::new(shape, 99).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let archive = dir.path().join("pretrained.tarch");
    source.save(&archive).unwrap();
    let with_import = TrainConfig {
        pretrained: Some(archive),
        ..config
    };
    let t = train_model(&with_import, &train, &train, &scheme).unwrap();
    let TrainedModel::Encoder { model, .. } = &t.checkpoint.model else {
        panic!()
    };
    assert_eq!(model.flat_values(), source.flat_values());
}

#[test]
fn mismatched_data_is_rejected() {
    let scheme = small_scheme();
    let train = generate_synthetic(6, &scheme, 16);
    let config = TrainConfig {
        model: ModelKind::Majority,
        ..Default::default()
    };
    let t = train_model(&config, &train, &train, &scheme).unwrap();

    let foreign = RecordSet::new(
        Split::Test,
        vec![Record::new("x", vec!["a".into()], vec![scheme.len() + 3]).unwrap()],
    )
    .unwrap();
    assert!(matches!(
        t.checkpoint.predict(&foreign),
        Err(PipelineError::Compatibility(_))
    ));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("in.tsv");
    fs::write(&path, "word\tMedication_Dosage\n").unwrap();
    let err = read_for_scheme(&path, Split::Test, &scheme).unwrap_err();
    assert!(matches!(err, PipelineError::Compatibility(_)) && err.is_validation());

    let bad = TrainConfig {
        majority_label: Some("Nope".into()),
        ..config
    };
    assert!(matches!(
        train_model(&bad, &train, &train, &scheme),
        Err(PipelineError::Config(_))
    ));
}

#[test]
fn majority_picks_most_frequent_subclass() {
    let scheme = small_scheme();
    let train = generate_synthetic(30, &scheme, 17);
    let config = TrainConfig {
        model: ModelKind::Majority,
        ..Default::default()
    };
    let t = train_model(&config, &train, &train, &scheme).unwrap();
    let mut counts = vec![0; scheme.len()];
    train
        .records()
        .iter()
        .flat_map(|r| r.labels())
        .for_each(|&l| counts[l] += 1);
    let TrainedModel::Majority(label) = t.checkpoint.model else {
        panic!()
    };
    assert_ne!(label, scheme.na());
    assert!((1..scheme.len()).all(|l| counts[l] <= counts[label]));
    assert_eq!(t.checkpoint.config.majority_label.as_deref(), Some(scheme.name(label)));
}
