//! Acceptance checks, one PASS/FAIL line per criterion.
//!
//! Run with `cargo test -p handover-ie --test acceptance`. The process
//! exits non-zero if any criterion fails.
//!
//! The real-data run in criterion 8 only happens when `HANDOVER_IE_DATA`
//! names a directory holding `train.tsv`, `valid.tsv` and `test.tsv` and
//! `HANDOVER_IE_CONFIG` names a training config (normally one that points
//! at pretrained weights, a name map and the exporter's vocabulary).

mod common;

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use common::bpe::{brute_force_merges, classic, random_corpus};
use common::crf::{all_paths, random_scores};
use common::{every_label_train, reference_counts, reference_gold, MAJORITY_CLASS, MAJORITY_MACRO, RANDOM_MACRO};
use handover_ie::corpus::{generate_synthetic, serialize_records, LabelScheme, Record, RecordSet, Split};
use handover_ie::crf::{log_partition, marginals, nll_and_grad, viterbi, CrfModel, CrfSettings};
use handover_ie::encoder::{EncoderError, EncoderModel, Mode, ModelConfig, PositionMode};
use handover_ie::eval::{
    baseline_majority, baseline_random, emit_report, evaluate, prf_from_counts, Prf, ReportFormat,
};
use handover_ie::numerics::archive::write_archive;
use handover_ie::numerics::Tensor;
use handover_ie::numerics::{
    check_flat_with, grad_check_with, ops::log_sum_exp, ArchiveEntry, NumericsError, ParamSet, Stencil,
};
use handover_ie::pipeline::{read_splits, run_experiment, train_model, ModelKind, TrainConfig, TrainedModel};
use handover_ie::tokenizer::train_bpe;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn criterion(n: usize, name: &str, budget: Duration, f: impl FnOnce() -> Check) -> bool {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    });
    let took = start.elapsed();
    let (pass, detail) = match outcome {
        Ok(d) if took <= budget => (true, d),
        Ok(d) => (false, format!("{d}; over the {:.0} s budget", budget.as_secs_f64())),
        Err(e) => (false, e),
    };
    println!(
        "{} [{n}] {name}: {detail} ({:.2} s)",
        if pass { "PASS" } else { "FAIL" },
        took.as_secs_f64()
    );
    pass
}

fn metric_oracle() -> Check {
    let scheme = LabelScheme::handover();
    let counts = reference_counts();
    let rows = [
        ("N.A.", scheme.na(), (0.8496, 0.7881, 0.8177)),
        ("Gender", scheme.id("PI_Gender").unwrap(), (1.0, 0.3483, 0.5167)),
        ("Last Name", scheme.id("PI_LastName").unwrap(), (1.0, 0.9901, 0.995)),
        (
            "Age in Years",
            scheme.id("PI_AgeInYears").unwrap(),
            (0.8974, 0.9964, 0.9444),
        ),
        ("Current Room", scheme.id("PI_CurrentRoom").unwrap(), (1.0, 1.0, 1.0)),
    ];
    let mut worst: f64 = 0.0;
    for (name, id, (p, r, f)) in rows {
        let c = counts.get(id);
        let got = prf_from_counts(c.tp, c.fp, c.fn_);
        let err = [(got.precision, p), (got.recall, r), (got.f1, f)]
            .iter()
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        ensure(err <= 5e-4, || {
            format!("{name}: got {got:?}, reference ({p}, {r}, {f})")
        })?;
        worst = worst.max(err);
    }
    Ok(format!("5 rows, max abs deviation {worst:.2e} (tolerance 5e-4)"))
}

fn param_counts() -> Check {
    let base = ModelConfig::bert_base(36).param_count() as f64;
    let large = ModelConfig::bert_large(36).param_count() as f64;
    let (db, dl) = (base / 110e6 - 1.0, large / 340e6 - 1.0);
    ensure(db.abs() <= 0.05 && dl.abs() <= 0.05, || {
        format!("base {base} ({:+.2}%), large {large} ({:+.2}%)", db * 100.0, dl * 100.0)
    })?;
    Ok(format!(
        "base {:.2}M ({:+.2}%), large {:.2}M ({:+.2}%) (tolerance 5%)",
        base / 1e6,
        db * 100.0,
        large / 1e6,
        dl * 100.0
    ))
}

fn to_numerics(e: EncoderError) -> NumericsError {
    match e {
        EncoderError::Numerics(n) => n,
        _ => NumericsError::NonFiniteObjective,
    }
}

fn random_encoder_instance(rng: &mut ChaCha8Rng) -> (EncoderModel, Vec<usize>, Vec<Option<usize>>, Option<u64>) {
    let num_heads = rng.gen_range(1..=2);
    let config = ModelConfig {
        num_layers: rng.gen_range(1..=2),
        hidden_size: num_heads * rng.gen_range(2..=4),
        num_heads,
        ffn_size: rng.gen_range(4..=12),
        vocab_size: rng.gen_range(6..=12),
        max_positions: 8,
        num_labels: rng.gen_range(2..=4),
        num_segments: 2,
        position_mode: if rng.gen_bool(0.5) {
            PositionMode::Learned
        } else {
            PositionMode::Sinusoidal
        },
        dropout: if rng.gen_bool(0.5) { 0.2 } else { 0.0 },
    };
    let mut model = EncoderModel::new(config.clone(), rng.gen()).unwrap();
    // larger weights than the 0.02 init keep gradients clear of the
    // finite-difference noise floor
    model.visit_mut(&mut |p| {
        for v in p.value.data_mut() {
            *v += rng.gen_range(-0.5..0.5);
        }
    });
    let len = rng.gen_range(2..=6);
    let ids: Vec<usize> = (0..len).map(|_| rng.gen_range(0..config.vocab_size)).collect();
    let mut labels: Vec<Option<usize>> = (0..len)
        .map(|_| rng.gen_bool(0.75).then(|| rng.gen_range(0..config.num_labels)))
        .collect();
    labels[rng.gen_range(0..len)] = Some(rng.gen_range(0..config.num_labels));
    let dropout_seed = (config.dropout > 0.0).then(|| rng.gen());
    (model, ids, labels, dropout_seed)
}

fn random_crf_instance(rng: &mut ChaCha8Rng) -> (CrfModel, Vec<Record>) {
    let k = rng.gen_range(2..=4);
    let scheme = LabelScheme::new(LabelScheme::handover().labels()[..k].to_vec()).unwrap();
    let vocab = ["pt", "72", "bed", "5mg", "ok", "Smith", "room"];
    let records: Vec<Record> = (0..rng.gen_range(1..=4))
        .map(|i| {
            let len = rng.gen_range(1..=5);
            let words = (0..len)
                .map(|_| vocab[rng.gen_range(0..vocab.len())].to_string())
                .collect();
            let labels = (0..len).map(|_| rng.gen_range(0..k)).collect();
            Record::new(format!("r{i}"), words, labels).unwrap()
        })
        .collect();
    let mut model = CrfModel::new(scheme, &records, &CrfSettings::default());
    model.l2_lambda = rng.gen_range(0.0..2.0);
    model.weights.iter_mut().for_each(|w| *w = rng.gen_range(-1.0..1.0));
    (model, records)
}

fn gradient_suites() -> Check {
    const INSTANCES: usize = 24;
    const LIMIT: f64 = 1e-5;
    // the five-point stencil at this step keeps both truncation and
    // round-off well under the limit, including coordinates whose gradient
    // is around 1e-7
    const STEP: f64 = 1e-3;
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut encoder_worst: f64 = 0.0;
    let mut encoder_checked = 0;
    for i in 0..INSTANCES {
        let (mut model, ids, labels, dropout_seed) = random_encoder_instance(&mut rng);
        let norm = labels.iter().flatten().count() as f64;
        let report = grad_check_with(&mut model, STEP, Stencil::FivePoint, |m| {
            // the same dropout masks on every evaluation
            let mut drop_rng = dropout_seed.map(ChaCha8Rng::seed_from_u64);
            let mut mode = match &mut drop_rng {
                Some(r) => Mode::Train(r),
                None => Mode::Eval,
            };
            m.forward_backward(&ids, &labels, norm, &mut mode).map_err(to_numerics)
        })
        .map_err(|e| format!("encoder instance {i}: {e}"))?;
        ensure(report.max_relative_error < LIMIT, || {
            format!("encoder instance {i}: {report:?}")
        })?;
        encoder_worst = encoder_worst.max(report.max_relative_error);
        encoder_checked += report.checked;
    }
    let mut crf_worst: f64 = 0.0;
    let mut crf_checked = 0;
    for i in 0..INSTANCES {
        let (model, records) = random_crf_instance(&mut rng);
        let inst: Vec<_> = records.iter().map(|r| model.instance(r)).collect();
        let (_, analytic) = nll_and_grad(&model, &inst);
        let mut w = model.weights.clone();
        let mut probe = model.clone();
        let report = check_flat_with(&mut w, &analytic, STEP, Stencil::FivePoint, |x| {
            probe.weights.copy_from_slice(x);
            nll_and_grad(&probe, &inst).0
        })
        .map_err(|e| format!("crf instance {i}: {e}"))?;
        ensure(report.max_relative_error < LIMIT, || {
            format!("crf instance {i}: {report:?}")
        })?;
        crf_worst = crf_worst.max(report.max_relative_error);
        crf_checked += report.checked;
    }
    Ok(format!(
        "encoder {INSTANCES} instances, {encoder_checked} coordinates, max rel err {encoder_worst:.2e}; \
         crf {INSTANCES} instances, {crf_checked} coordinates, max rel err {crf_worst:.2e} \
         (five-point central differences, step 1e-3, limit 1e-5)"
    ))
}

fn crf_brute_force() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst: f64 = 0.0;
    let instances = 300;
    for i in 0..instances {
        // integer scores in half the instances force exact Viterbi ties
        let s = random_scores(&mut rng, i % 2 == 1);
        let (len, k) = (s.len(), s.num_labels());
        let paths = all_paths(len, k);
        let scores: Vec<f64> = paths.iter().map(|p| s.path_score(p)).collect();
        let log_z = log_sum_exp(&scores);
        worst = worst.max((log_partition(&s) - log_z).abs());

        let m = marginals(&s);
        let mut unary = Tensor::zeros(&[len, k]);
        let mut pair = vec![Tensor::zeros(&[k, k]); len.saturating_sub(1)];
        for (p, sc) in paths.iter().zip(&scores) {
            let prob = (sc - log_z).exp();
            for t in 0..len {
                unary.set(t, p[t], unary.get(t, p[t]) + prob);
                if t + 1 < len {
                    let cur = pair[t].get(p[t], p[t + 1]);
                    pair[t].set(p[t], p[t + 1], cur + prob);
                }
            }
        }
        for (a, b) in m.unary.data().iter().zip(unary.data()) {
            worst = worst.max((a - b).abs());
        }
        for (mt, bt) in m.pairwise.iter().zip(&pair) {
            for (a, b) in mt.data().iter().zip(bt.data()) {
                worst = worst.max((a - b).abs());
            }
        }
        ensure(worst <= 1e-8, || format!("instance {i}: deviation {worst:e}"))?;

        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let expected = paths
            .iter()
            .zip(&scores)
            .filter(|(_, &sc)| sc == max)
            .map(|(p, _)| p)
            .min_by_key(|p| p.iter().rev().copied().collect::<Vec<_>>())
            .unwrap();
        ensure(&viterbi(&s) == expected, || {
            format!("instance {i}: Viterbi path differs")
        })?;
    }
    Ok(format!(
        "{instances} instances, max deviation {worst:.2e} (tolerance 1e-8), all Viterbi paths exact"
    ))
}

fn bpe_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let corpora = 40;
    for i in 0..corpora {
        let corpus = random_corpus(&mut rng);
        let n = rng.gen_range(0..25);
        let fast = train_bpe(&corpus, n).map_err(|e| e.to_string())?;
        ensure(fast.merges() == brute_force_merges(&corpus, n).as_slice(), || {
            format!("corpus {i} {corpus:?}: merge lists differ")
        })?;
    }
    let table = train_bpe(&classic(), 10).map_err(|e| e.to_string())?;
    let first = table.merges().first().cloned();
    ensure(first == Some(("e".into(), "s".into())), || {
        format!("first merge {first:?}")
    })?;
    Ok(format!(
        "{corpora} random corpora match the re-count oracle; first merge (e, s)"
    ))
}

fn word_accuracy(gold: &RecordSet, pred: &RecordSet) -> f64 {
    let (mut hit, mut total) = (0, 0);
    for (g, p) in gold.records().iter().zip(pred.records()) {
        hit += g.labels().iter().zip(p.labels()).filter(|(a, b)| a == b).count();
        total += g.len();
    }
    hit as f64 / total as f64
}

fn small_scheme() -> LabelScheme {
    LabelScheme::new(LabelScheme::handover().labels()[..8].to_vec()).unwrap()
}

fn tiny_encoder_config() -> TrainConfig {
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

fn overfit_sanity() -> Check {
    let scheme = small_scheme();
    let train = generate_synthetic(20, &scheme, 1);
    let t = train_model(&tiny_encoder_config(), &train, &train, &scheme).map_err(|e| e.to_string())?;
    let acc = word_accuracy(&train, &t.checkpoint.predict(&train).map_err(|e| e.to_string())?);
    ensure(acc >= 0.99, || format!("encoder training accuracy {acc:.4} < 0.99"))?;

    let scheme = LabelScheme::handover();
    let train = generate_synthetic(200, &scheme, 11);
    let valid = generate_synthetic(40, &scheme, 12);
    let test = generate_synthetic(60, &scheme, 13);
    let f1 = |model| -> Result<f64, String> {
        let config = TrainConfig {
            model,
            crf_max_iterations: 100,
            ..Default::default()
        };
        let e = run_experiment(&config, &train, &valid, &test, &scheme).map_err(|e| e.to_string())?;
        Ok(e.report.macro_avg.f1)
    };
    let (crf, random, majority) = (f1(ModelKind::Crf)?, f1(ModelKind::Random)?, f1(ModelKind::Majority)?);
    let margin = crf - random.max(majority);
    ensure(margin >= 0.2, || {
        format!("crf {crf:.4}, random {random:.4}, majority {majority:.4}")
    })?;
    Ok(format!(
        "encoder L2 H32 A2 accuracy {acc:.4} on 20 records; crf macro F1 {crf:.4} vs random {random:.4}, \
         majority {majority:.4} (margin {margin:.4} >= 0.2)"
    ))
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

fn determinism() -> Check {
    let scheme = small_scheme();
    let train = generate_synthetic(16, &scheme, 3);
    let test = generate_synthetic(6, &scheme, 4);
    let configs = [
        TrainConfig {
            epochs: 3,
            dropout: 0.1,
            ..tiny_encoder_config()
        },
        TrainConfig {
            model: ModelKind::Crf,
            crf_max_iterations: 50,
            ..Default::default()
        },
    ];
    let mut files = 0;
    for config in &configs {
        let mut runs = Vec::new();
        for _ in 0..2 {
            let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
            let e = run_experiment(config, &train, &train, &test, &scheme).map_err(|e| e.to_string())?;
            e.trained.checkpoint.save(dir.path()).map_err(|e| e.to_string())?;
            let mut bytes = dir_bytes(dir.path());
            for format in [ReportFormat::Table, ReportFormat::Csv, ReportFormat::Json] {
                bytes.push((
                    format!("report {format:?}"),
                    emit_report(&e.report, format).into_bytes(),
                ));
            }
            bytes.push((
                "predictions".into(),
                serialize_records(&e.predictions, &scheme).into_bytes(),
            ));
            runs.push(bytes);
        }
        ensure(runs[0] == runs[1], || format!("{} runs differ", config.model))?;
        files += runs[0].len();
    }
    Ok(format!(
        "encoder and crf: {files} checkpoint, report and prediction files byte-identical across runs"
    ))
}

fn mean_macro(gold: &RecordSet, train: &RecordSet, scheme: &LabelScheme, seeds: u64) -> (Prf, f64) {
    let labels: Vec<usize> = (0..scheme.len()).collect();
    let mut mean = Prf::default();
    let mut within = 0;
    for seed in 0..seeds {
        let m = evaluate(gold, &baseline_random(gold, &labels, seed), train, scheme, false)
            .unwrap()
            .macro_avg;
        if within_row(&m, RANDOM_MACRO, 0.01) {
            within += 1;
        }
        mean.precision += m.precision / seeds as f64;
        mean.recall += m.recall / seeds as f64;
        mean.f1 += m.f1 / seeds as f64;
    }
    (mean, within as f64 / seeds as f64)
}

fn within_row(m: &Prf, row: (f64, f64, f64), tol: f64) -> bool {
    (m.precision - row.0).abs() <= tol && (m.recall - row.1).abs() <= tol && (m.f1 - row.2).abs() <= tol
}

/// Runs the pretrained-import path with a small stand-in archive whose
/// tensors carry external names and transposed linear weights.
fn import_stand_in() -> Result<String, String> {
    let scheme = LabelScheme::handover();
    let train = generate_synthetic(30, &scheme, 21);
    let valid = generate_synthetic(10, &scheme, 22);
    let test = generate_synthetic(10, &scheme, 23);
    let config = TrainConfig {
        learning_rate: 0.0,
        epochs: 1,
        ..tiny_encoder_config()
    };
    let t = train_model(&config, &train, &valid, &scheme).map_err(|e| e.to_string())?;
    let TrainedModel::Encoder { model, .. } = t.checkpoint.model else {
        return Err("encoder expected".into());
    };
    let source = EncoderModel::new(model.config, 1234).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut entries = Vec::new();
    let mut map = String::new();
    source.visit(&mut |p| {
        let external = format!("bert.{}", p.name);
        let transpose = p.value.shape().len() == 2 && !p.name.starts_with("embeddings.");
        let tensor = if transpose {
            p.value.transpose()
        } else {
            p.value.clone()
        };
        map.push_str(&format!("{external} {}{}\n", p.name, if transpose { " T" } else { "" }));
        entries.push(ArchiveEntry::f64(external, tensor));
    });
    let archive = dir.path().join("external.tarch");
    write_archive(&archive, &entries).map_err(|e| e.to_string())?;
    let map_path = dir.path().join("names.map");
    fs::write(&map_path, map).map_err(|e| e.to_string())?;
    let config = TrainConfig {
        pretrained: Some(archive),
        name_map: Some(map_path),
        ..config
    };
    let e = run_experiment(&config, &train, &valid, &test, &scheme).map_err(|e| e.to_string())?;
    let TrainedModel::Encoder { model, .. } = &e.trained.checkpoint.model else {
        return Err("encoder expected".into());
    };
    ensure(model.flat_values() == source.flat_values(), || {
        "imported weights differ".into()
    })?;
    Ok(format!(
        "stand-in import through a name map reaches a report over {} classes",
        e.report.evaluated.len()
    ))
}

fn real_data_run() -> Result<String, String> {
    let (Ok(data), Ok(config_path)) = (std::env::var("HANDOVER_IE_DATA"), std::env::var("HANDOVER_IE_CONFIG")) else {
        return Ok("real-data run not executed (HANDOVER_IE_DATA and HANDOVER_IE_CONFIG unset)".into());
    };
    let data = Path::new(&data);
    let text = fs::read_to_string(&config_path).map_err(|e| format!("{config_path}: {e}"))?;
    let config = TrainConfig::from_kv_str(&text).map_err(|e| e.to_string())?;
    let (train, valid, test) = (data.join("train.tsv"), data.join("valid.tsv"), data.join("test.tsv"));
    let (sets, scheme) = read_splits(&[
        (&train, Split::Train),
        (&valid, Split::Validation),
        (&test, Split::Test),
    ])
    .map_err(|e| e.to_string())?;
    let e = run_experiment(&config, &sets[0], &sets[1], &sets[2], &scheme).map_err(|e| e.to_string())?;
    let m = e.report.macro_avg;
    Ok(format!(
        "real-data {} run: macro P/R/F1 {:.3}/{:.3}/{:.3}",
        config.model, m.precision, m.recall, m.f1
    ))
}

fn full_scale() -> Check {
    let scheme = LabelScheme::handover();
    let gold = reference_gold();
    let train = every_label_train(&scheme);
    let majority = evaluate(
        &gold,
        &baseline_majority(&gold, scheme.id(MAJORITY_CLASS).unwrap()),
        &train,
        &scheme,
        false,
    )
    .map_err(|e| e.to_string())?
    .macro_avg;
    ensure(within_row(&majority, MAJORITY_MACRO, 0.01), || {
        format!("majority {majority:?}")
    })?;
    let (random, share) = mean_macro(&gold, &train, &scheme, 200);
    ensure(within_row(&random, RANDOM_MACRO, 0.01), || {
        format!("random seed mean {random:?}")
    })?;
    let stand_in = import_stand_in()?;
    let real = real_data_run()?;
    Ok(format!(
        "reference test histogram: majority {:.3}/{:.3}/{:.3}, random mean over 200 seeds {:.3}/{:.3}/{:.3} \
         ({:.0}% of single seeds within 0.01); {stand_in}; {real}",
        majority.precision,
        majority.recall,
        majority.f1,
        random.precision,
        random.recall,
        random.f1,
        share * 100.0
    ))
}

fn main() {
    // `cargo test` passes harness flags such as `--nocapture`; listing asks
    // for no tests to be enumerated
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let s = Duration::from_secs;
    let results = [
        criterion(1, "metric oracle", s(1), metric_oracle),
        criterion(2, "parameter counts", s(1), param_counts),
        criterion(3, "gradient suites", s(120), gradient_suites),
        criterion(4, "crf brute force", s(60), crf_brute_force),
        criterion(5, "bpe oracle", s(30), bpe_oracle),
        criterion(6, "overfit sanity", s(300), overfit_sanity),
        criterion(7, "determinism", Duration::MAX, determinism),
        criterion(8, "full-scale path and baselines", Duration::MAX, full_scale),
    ];
    let failed = results.iter().filter(|&&p| !p).count();
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
