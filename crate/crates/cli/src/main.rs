use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use handover_ie::corpus::{generate_synthetic, serialize_records, LabelScheme, RecordSet, Split};
use handover_ie::eval::{baseline_random, emit_report, evaluate, ReportFormat};
use handover_ie::pipeline::{
    default_grid, grid_search, read_for_scheme, read_splits, run_experiment, train_model, Checkpoint, EpochStats,
    ModelKind, PipelineError, TrainConfig,
};
use handover_ie::tokenizer::{encode, train_bpe, word_frequencies, MergeTable};

const SEED_VAR: &str = "HANDOVER_IE_SEED";

#[derive(Parser)]
#[command(
    name = "handover-ie",
    version,
    about = "Word-level information extraction for clinical handover notes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train or apply the subword tokenizer.
    #[command(subcommand)]
    Tokenizer(TokenizerCommand),
    /// Train a model and write a checkpoint directory.
    Train(TrainArgs),
    /// Label a TSV file with a trained checkpoint.
    Predict(PredictArgs),
    /// Score predictions against gold labels.
    Eval(EvalArgs),
    /// Write trivial baseline predictions.
    Baseline(BaselineArgs),
    /// Generate a synthetic labelled corpus.
    Synth(SynthArgs),
    /// Train, predict and evaluate in one go; synthesizes data when no files are given.
    Experiment(ExperimentArgs),
}

#[derive(Subcommand)]
enum TokenizerCommand {
    /// Learn merges from the words of a TSV file
    Train {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 1000)]
        merges: usize,
        #[arg(long)]
        lowercase: bool,
        /// Directory for merges.txt and vocab.txt.
        #[arg(long)]
        out: PathBuf,
    },
    /// Print `id<TAB>window<TAB>token ids` for every window of every record.
    Encode {
        #[arg(long)]
        tokenizer: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 128)]
        max_len: usize,
        #[arg(long)]
        lowercase: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Encoder,
    Crf,
    Random,
    Majority,
}

impl From<Kind> for ModelKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Encoder => ModelKind::Encoder,
            Kind::Crf => ModelKind::Crf,
            Kind::Random => ModelKind::Random,
            Kind::Majority => ModelKind::Majority,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Table,
    Csv,
    Json,
}

impl From<Format> for ReportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Table => ReportFormat::Table,
            Format::Csv => ReportFormat::Csv,
            Format::Json => ReportFormat::Json,
        }
    }
}

#[derive(Args)]
struct ConfigArgs {
    /// Overrides the `model` key of the config.
    #[arg(long, value_enum)]
    model: Option<Kind>,
    /// `key = value` training configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Tensor archive with pretrained encoder weights.
    #[arg(long)]
    pretrained: Option<PathBuf>,
    /// Search the default learning-rate, batch-size and epoch grid on the validation split.
    #[arg(long)]
    grid: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    valid: PathBuf,
    /// Checkpoint directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// TSV records; lines without a label are accepted.
    #[arg(long)]
    input: PathBuf,
    /// Defaults to standard output.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    gold: PathBuf,
    #[arg(long)]
    pred: PathBuf,
    /// Training split; its labels define the evaluated classes.
    #[arg(long)]
    train: PathBuf,
    #[arg(long, value_enum, default_value = "table")]
    format: Format,
    /// Count N.A. as a class in the macro average.
    #[arg(long)]
    include_na: bool,
}

#[derive(Args)]
struct BaselineArgs {
    #[arg(long, value_enum)]
    kind: BaselineKind,
    /// Records to relabel.
    #[arg(long)]
    input: PathBuf,
    /// Training split, used for the label set and the majority label.
    #[arg(long)]
    train: PathBuf,
    #[arg(long, default_value_t = 13)]
    seed: u64,
    /// Majority label; defaults to the most frequent non-N.A. training label.
    #[arg(long)]
    label: Option<String>,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum BaselineKind {
    Random,
    Majority,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 13)]
    seed: u64,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, requires_all = ["valid", "test"])]
    train: Option<PathBuf>,
    #[arg(long)]
    valid: Option<PathBuf>,
    #[arg(long)]
    test: Option<PathBuf>,
    /// Records to synthesize when no files are given (split 60/20/20).
    #[arg(long, default_value_t = 200)]
    synthetic: usize,
    /// Directory for the checkpoint, predictions and reports.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "table")]
    format: Format,
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_VAR) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| PipelineError::Config(format!("{SEED_VAR}={v:?} is not an unsigned integer")).into()),
        Err(_) => Ok(None),
    }
}

fn load_config(args: &ConfigArgs) -> Result<TrainConfig> {
    let mut config = match &args.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            TrainConfig::from_kv_str(&text)?
        }
        None => TrainConfig::default(),
    };
    if let Some(k) = args.model {
        config.model = k.into();
    }
    if let Some(p) = &args.pretrained {
        config.pretrained = Some(p.clone());
    }
    if let Some(seed) = env_seed()? {
        config.seed = seed;
    }
    config.validate()?;
    Ok(config)
}

fn write_out(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn history_table(history: &[EpochStats], best: usize) -> String {
    let mut out = String::from("epoch\ttrain_loss\tvalid_precision\tvalid_recall\tvalid_f1\tkept\n");
    for h in history {
        let loss = h.train_loss.map_or_else(|| "-".to_string(), |l| format!("{l:.6}"));
        out.push_str(&format!(
            "{}\t{loss}\t{:.4}\t{:.4}\t{:.4}\t{}\n",
            h.epoch,
            h.valid.precision,
            h.valid.recall,
            h.valid.f1,
            if h.epoch == best { "*" } else { "" }
        ));
    }
    out
}

/// Picks the grid winner when asked, printing the leaderboard to stderr.
fn select_config(
    args: &ConfigArgs,
    config: TrainConfig,
    train: &RecordSet,
    valid: &RecordSet,
    scheme: &LabelScheme,
) -> Result<TrainConfig> {
    if !args.grid {
        return Ok(config);
    }
    let result = grid_search(&default_grid(&config), train, valid, scheme)?;
    eprintln!("rank\tlearning_rate\tbatch_size\tepochs\tvalid_f1");
    for (i, e) in result.leaderboard.iter().enumerate() {
        eprintln!(
            "{}\t{}\t{}\t{}\t{:.4}",
            i + 1,
            e.config.learning_rate,
            e.config.batch_size,
            e.config.epochs,
            e.valid.f1
        );
    }
    Ok(result.best)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Tokenizer(TokenizerCommand::Train {
            input,
            merges,
            lowercase,
            out,
        }) => {
            let (sets, _) = read_splits(&[(&input, Split::Train)])?;
            let words = sets[0]
                .records()
                .iter()
                .flat_map(|r| r.words().iter().map(String::as_str));
            let table = train_bpe(&word_frequencies(words, lowercase), merges).map_err(PipelineError::from)?;
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            table.save(&out)?;
            eprintln!(
                "{} merges, {} vocabulary entries",
                table.merges().len(),
                table.vocab_size()
            );
        }
        Command::Tokenizer(TokenizerCommand::Encode {
            tokenizer,
            input,
            max_len,
            lowercase,
        }) => {
            let table = MergeTable::load(&tokenizer)?;
            let (sets, _) = read_splits(&[(&input, Split::Test)])?;
            let mut out = String::new();
            for r in sets[0].records() {
                let words: Vec<String> = if lowercase {
                    r.words().iter().map(|w| w.to_lowercase()).collect()
                } else {
                    r.words().to_vec()
                };
                for (i, w) in encode(&words, &table, max_len)
                    .map_err(PipelineError::from)?
                    .iter()
                    .enumerate()
                {
                    let ids: Vec<String> = w.token_ids.iter().map(usize::to_string).collect();
                    out.push_str(&format!("{}\t{i}\t{}\n", r.id(), ids.join(" ")));
                }
            }
            write_out(None, &out)?;
        }
        Command::Train(args) => {
            let config = load_config(&args.config)?;
            let (sets, scheme) = read_splits(&[(&args.train, Split::Train), (&args.valid, Split::Validation)])?;
            let config = select_config(&args.config, config, &sets[0], &sets[1], &scheme)?;
            let trained = train_model(&config, &sets[0], &sets[1], &scheme)?;
            trained.checkpoint.save(&args.out)?;
            print!("{}", history_table(&trained.history, trained.best_epoch));
        }
        Command::Predict(args) => {
            let checkpoint = Checkpoint::load(&args.checkpoint)?;
            let records = read_for_scheme(&args.input, Split::Test, &checkpoint.scheme)?;
            let pred = checkpoint.predict(&records)?;
            write_out(args.output.as_deref(), &serialize_records(&pred, &checkpoint.scheme))?;
        }
        Command::Eval(args) => {
            let (sets, scheme) = read_splits(&[
                (&args.gold, Split::Test),
                (&args.pred, Split::Test),
                (&args.train, Split::Train),
            ])?;
            let report =
                evaluate(&sets[0], &sets[1], &sets[2], &scheme, args.include_na).map_err(PipelineError::from)?;
            write_out(None, &emit_report(&report, args.format.into()))?;
        }
        Command::Baseline(args) => {
            let (sets, scheme) = read_splits(&[(&args.input, Split::Test), (&args.train, Split::Train)])?;
            let seed = env_seed()?.unwrap_or(args.seed);
            let pred = match args.kind {
                BaselineKind::Random => {
                    let labels: Vec<usize> = (0..scheme.len()).collect();
                    baseline_random(&sets[0], &labels, seed)
                }
                BaselineKind::Majority => {
                    let config = TrainConfig {
                        model: ModelKind::Majority,
                        majority_label: args.label.clone(),
                        ..Default::default()
                    };
                    let trained = train_model(&config, &sets[1], &sets[1], &scheme)?;
                    trained.checkpoint.predict(&sets[0])?
                }
            };
            write_out(args.output.as_deref(), &serialize_records(&pred, &scheme))?;
        }
        Command::Synth(args) => {
            let seed = env_seed()?.unwrap_or(args.seed);
            let scheme = LabelScheme::handover();
            let set = generate_synthetic(args.n, &scheme, seed);
            write_out(args.output.as_deref(), &serialize_records(&set, &scheme))?;
        }
        Command::Experiment(args) => experiment(args)?,
    }
    Ok(())
}

fn experiment(args: ExperimentArgs) -> Result<()> {
    let config = load_config(&args.config)?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let (train, valid, test) = match (&args.train, &args.valid, &args.test) {
        (Some(t), Some(v), Some(s)) => (t.clone(), v.clone(), s.clone()),
        _ => {
            if args.synthetic < 5 {
                return Err(PipelineError::Config("--synthetic needs at least 5 records".into()).into());
            }
            let scheme = LabelScheme::handover();
            let all = generate_synthetic(args.synthetic, &scheme, config.seed);
            let n = all.len();
            let cuts = [0, n * 3 / 5, n * 4 / 5, n];
            let mut paths = Vec::new();
            for (name, w) in ["train", "valid", "test"].iter().zip(cuts.windows(2)) {
                let part = RecordSet::new(Split::Train, all.records()[w[0]..w[1]].to_vec())?;
                let p = args.out.join(format!("{name}.tsv"));
                fs::write(&p, serialize_records(&part, &scheme))?;
                paths.push(p);
            }
            (paths[0].clone(), paths[1].clone(), paths[2].clone())
        }
    };
    let (sets, scheme) = read_splits(&[
        (&train, Split::Train),
        (&valid, Split::Validation),
        (&test, Split::Test),
    ])?;
    let config = select_config(&args.config, config, &sets[0], &sets[1], &scheme)?;
    let e = run_experiment(&config, &sets[0], &sets[1], &sets[2], &scheme)?;
    e.trained.checkpoint.save(&args.out.join("checkpoint"))?;
    fs::write(
        args.out.join("predictions.tsv"),
        serialize_records(&e.predictions, &scheme),
    )?;
    fs::write(
        args.out.join("history.tsv"),
        history_table(&e.trained.history, e.trained.best_epoch),
    )?;
    for format in [ReportFormat::Table, ReportFormat::Csv, ReportFormat::Json] {
        let ext = match format {
            ReportFormat::Table => "txt",
            ReportFormat::Csv => "csv",
            ReportFormat::Json => "json",
        };
        fs::write(args.out.join(format!("report.{ext}")), emit_report(&e.report, format))?;
    }
    write_out(None, &emit_report(&e.report, args.format.into()))?;
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<PipelineError>() {
        Some(e) if e.is_divergence() => 3,
        Some(e) if e.is_validation() => 2,
        Some(_) => 1,
        None => {
            if err.chain().any(|c| c.is::<handover_ie::corpus::CorpusError>()) {
                2
            } else {
                1
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
