//! `mcseg` — multi-criteria word segmentation toolkit.
//!
//! Subcommands map one-to-one onto the library operations: `preprocess`
//! (normalization chain), `build-joint`, `pretrain`, `finetune`, `predict`,
//! `evaluate` and `sweep`. Domain errors exit 1 with a single-line
//! diagnostic; usage errors exit 2. `MCSEG_LOG={quiet|info|debug}` controls
//! logging.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::{info, LevelFilter};

use mcseg_core::corpus::{
    self, default_punct_set, make_dev_split, preprocess_sentence, CharMapping,
};
use mcseg_core::eval::{self, low_resource_sweep, word_types, EvalReport};
use mcseg_core::files;
use mcseg_core::train::{
    finetune, infer, pretrain, Checkpoint, FinetuneInit, TrainConfig, TrainMode,
};
use mcseg_core::{CriterionId, Dtype, SegmentedSentence};

#[derive(Parser)]
#[command(
    name = "mcseg",
    version,
    about = "Multi-criteria Chinese word segmentation: corpus tools, meta pre-training, evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Normalize segmented corpora (simplify, fold width, collapse
    /// letter/digit runs, split clauses), optionally drawing a dev split
    Preprocess(PreprocessArgs),
    /// Merge per-criterion corpora into the joint pre-training pool with
    /// undefined-criterion substitution
    BuildJoint(BuildJointArgs),
    /// Pre-train the unified model on a joint corpus with the meta optimizer
    Pretrain(PretrainArgs),
    /// Fine-tune on one criterion with the plain optimizer
    Finetune(FinetuneArgs),
    /// Segment raw text with a trained checkpoint
    Predict(PredictArgs),
    /// Score a predicted segmentation against gold
    Evaluate(EvaluateArgs),
    /// Low-resource fine-tuning sweep over sampling rates
    Sweep(SweepArgs),
}

#[derive(Args)]
struct PreprocessArgs {
    /// Segmented corpus files (one clause per line, space-separated words)
    #[arg(long, required = true, num_args = 1..)]
    input: Vec<PathBuf>,

    /// Output file for the preprocessed clauses
    #[arg(long)]
    output: PathBuf,

    /// Traditional→simplified mapping file (src<TAB>dst); identity if absent
    #[arg(long)]
    mapping: Option<PathBuf>,

    /// Clause-terminator characters overriding the default set
    #[arg(long)]
    punct: Option<String>,

    /// Fraction of clauses to move into a dev split (after clause splitting)
    #[arg(long)]
    dev_rate: Option<f64>,

    /// Output file for the dev split
    #[arg(long, requires = "dev_rate")]
    dev_output: Option<PathBuf>,

    /// Seed for the dev draw
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(Args)]
struct BuildJointArgs {
    /// Input corpora as NAME=PATH pairs, e.g. pku=pku_train.seg
    #[arg(long, required = true, num_args = 1.., value_name = "NAME=PATH")]
    input: Vec<String>,

    /// Output joint corpus file (criterion<TAB>words per line)
    #[arg(long)]
    output: PathBuf,

    /// Fraction of sentences rewritten to the undefined criterion
    #[arg(long, default_value_t = 0.1)]
    unc_fraction: f64,

    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(Args)]
struct PretrainArgs {
    /// Training configuration (key=value lines); defaults if absent
    #[arg(long)]
    config: Option<PathBuf>,

    /// Joint corpus file
    #[arg(long)]
    input: PathBuf,

    /// Output checkpoint
    #[arg(long)]
    output: PathBuf,

    /// Seed override
    #[arg(long)]
    seed: Option<u64>,

    /// Metrics log (tab-separated key:value per step); <output>.metrics if absent
    #[arg(long)]
    metrics: Option<PathBuf>,
}

#[derive(Args)]
struct FinetuneArgs {
    #[arg(long)]
    config: Option<PathBuf>,

    /// Segmented training corpus for the target criterion
    #[arg(long)]
    input: PathBuf,

    /// Criterion token: `unc` for downstream criteria, a pre-training name otherwise
    #[arg(long, default_value = "unc")]
    criterion: String,

    /// Checkpoint to initialize from; fresh initialization if absent
    #[arg(long)]
    init: Option<PathBuf>,

    #[arg(long)]
    output: PathBuf,

    #[arg(long)]
    seed: Option<u64>,

    #[arg(long)]
    metrics: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    /// Trained checkpoint
    #[arg(long)]
    checkpoint: PathBuf,

    /// Raw text, one clause per line
    #[arg(long)]
    input: PathBuf,

    /// Output file; stdout if absent
    #[arg(long)]
    output: Option<PathBuf>,

    #[arg(long, default_value = "unc")]
    criterion: String,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Gold segmented corpus
    #[arg(long)]
    gold: PathBuf,

    /// Predicted segmented corpus (identical character stream)
    #[arg(long)]
    pred: PathBuf,

    /// Training corpus defining the in-vocabulary word set for OOV recall
    #[arg(long)]
    train_vocab: Option<PathBuf>,

    /// Also write the report as a TSV row with a fixed header
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: Option<PathBuf>,

    /// Full training corpus to sample from
    #[arg(long)]
    train: PathBuf,

    /// Fixed test corpus
    #[arg(long)]
    test: PathBuf,

    /// Sampling rates as a comma-separated list, e.g. 0.01,0.05,0.1
    #[arg(long)]
    rates: String,

    #[arg(long, default_value = "unc")]
    criterion: String,

    /// Checkpoints to fine-tune from (each adds a variant next to "fresh")
    #[arg(long, num_args = 0..)]
    init: Vec<PathBuf>,

    /// Output TSV table
    #[arg(long)]
    output: Option<PathBuf>,

    #[arg(long)]
    seed: Option<u64>,
}

fn init_logging() {
    let level = match std::env::var("MCSEG_LOG").as_deref() {
        Ok("quiet") => LevelFilter::Off,
        Ok("debug") => LevelFilter::Debug,
        Ok("info") | Err(_) => LevelFilter::Info,
        Ok(other) => {
            eprintln!("mcseg: MCSEG_LOG must be quiet, info or debug (got {other:?})");
            std::process::exit(2);
        }
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .format_target(false)
        .init();
}

fn main() {
    init_logging();
    let cli = Cli::parse();
    if let Err(err) = run(cli.command) {
        eprintln!("mcseg: {err:#}");
        std::process::exit(1);
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Preprocess(args) => run_preprocess(args),
        Command::BuildJoint(args) => run_build_joint(args),
        Command::Pretrain(args) => run_pretrain(args),
        Command::Finetune(args) => run_finetune(args),
        Command::Predict(args) => run_predict(args),
        Command::Evaluate(args) => run_evaluate(args),
        Command::Sweep(args) => run_sweep(args),
    }
}

fn load_config(path: &Option<PathBuf>, mode: TrainMode, seed: Option<u64>) -> Result<TrainConfig> {
    let mut config = match path {
        Some(p) => TrainConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
        None => TrainConfig::default(),
    };
    config.mode = mode;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    config.validate()?;
    Ok(config)
}

fn criterion(name: &str) -> Result<CriterionId> {
    Ok(CriterionId::new(name)?)
}

/// Reads a segmented corpus whose criterion identity comes from the caller.
fn read_corpus(path: &Path, criterion: &CriterionId) -> Result<Vec<SegmentedSentence>> {
    let sentences = files::read_segmented(path, criterion)
        .with_context(|| format!("reading {}", path.display()))?;
    if sentences.is_empty() {
        bail!("{}: no sentences", path.display());
    }
    Ok(sentences)
}

fn run_preprocess(args: PreprocessArgs) -> Result<()> {
    let mapping = match &args.mapping {
        Some(path) => {
            CharMapping::load(path).with_context(|| format!("reading {}", path.display()))?
        }
        None => CharMapping::identity(),
    };
    let punct: BTreeSet<char> = match &args.punct {
        Some(set) => set.chars().collect(),
        None => default_punct_set(),
    };
    let placeholder = CriterionId::undefined();
    let mut clauses = Vec::new();
    for path in &args.input {
        for sentence in read_corpus(path, &placeholder)? {
            clauses.extend(preprocess_sentence(&sentence, &mapping, &punct));
        }
    }
    info!("preprocessed {} clauses", clauses.len());

    match (args.dev_rate, &args.dev_output) {
        (Some(rate), Some(dev_path)) => {
            let split = make_dev_split(clauses, rate, args.seed)?;
            files::write_segmented(&args.output, &split.train)?;
            files::write_segmented(dev_path, &split.dev)?;
            info!(
                "wrote {} train clauses, {} dev clauses",
                split.train.len(),
                split.dev.len()
            );
        }
        (Some(_), None) => bail!("--dev-rate needs --dev-output"),
        _ => files::write_segmented(&args.output, &clauses)?,
    }
    Ok(())
}

fn run_build_joint(args: BuildJointArgs) -> Result<()> {
    let mut train_sets = Vec::new();
    for spec in &args.input {
        let (name, path) = spec
            .split_once('=')
            .with_context(|| format!("--input {spec:?} is not NAME=PATH"))?;
        let id = criterion(name)?;
        train_sets.push(read_corpus(Path::new(path), &id)?);
    }
    let joint = corpus::build_joint_corpus(&train_sets, args.unc_fraction, args.seed)?;
    let n_unc = joint
        .sentences
        .iter()
        .filter(|s| s.criterion().is_undefined())
        .count();
    files::write_joint(&args.output, &joint)?;
    info!(
        "joint corpus: {} sentences ({} as unc), {} characters, {} criteria",
        joint.sentences.len(),
        n_unc,
        joint.vocab.char_count(),
        joint.vocab.criterion_count()
    );
    Ok(())
}

fn metrics_path(explicit: &Option<PathBuf>, output: &Path) -> PathBuf {
    explicit.clone().unwrap_or_else(|| {
        let mut p = output.as_os_str().to_owned();
        p.push(".metrics");
        PathBuf::from(p)
    })
}

fn run_pretrain(args: PretrainArgs) -> Result<()> {
    let config = load_config(&args.config, TrainMode::Pretrain, args.seed)?;
    let joint = files::read_joint(&args.input)?;
    info!(
        "pre-training on {} sentences for {} meta test steps (k={})",
        joint.sentences.len(),
        config.meta_test_steps,
        config.k
    );
    let outcome = pretrain::<f32>(&joint, &config)?;
    outcome.checkpoint.save(&args.output)?;
    std::fs::write(
        metrics_path(&args.metrics, &args.output),
        outcome.metrics.join("\n") + "\n",
    )?;
    info!("checkpoint written to {}", args.output.display());
    Ok(())
}

fn run_finetune(args: FinetuneArgs) -> Result<()> {
    let config = load_config(&args.config, TrainMode::Finetune, args.seed)?;
    let target = criterion(&args.criterion)?;
    let train = read_corpus(&args.input, &target)?;
    let init = match &args.init {
        Some(path) => FinetuneInit::From(
            Checkpoint::<f32>::load(path)
                .with_context(|| format!("reading {}", path.display()))?,
        ),
        None => FinetuneInit::Fresh,
    };
    info!(
        "fine-tuning on {} sentences for {} epochs (criterion {})",
        train.len(),
        config.epochs,
        target
    );
    let outcome = finetune(&init, &train, &target, &config)?;
    outcome.checkpoint.save(&args.output)?;
    std::fs::write(
        metrics_path(&args.metrics, &args.output),
        outcome.metrics.join("\n") + "\n",
    )?;
    info!("checkpoint written to {}", args.output.display());
    Ok(())
}

fn run_predict(args: PredictArgs) -> Result<()> {
    let target = criterion(&args.criterion)?;
    let dtype = Checkpoint::<f32>::peek_dtype(&args.checkpoint)?;
    let lines = files::read_raw_lines(&args.input)?;
    let outcome = match dtype {
        Dtype::F32 => infer(&Checkpoint::<f32>::load(&args.checkpoint)?, &lines, &target)?,
        Dtype::F64 => infer(&Checkpoint::<f64>::load(&args.checkpoint)?, &lines, &target)?,
    };
    if outcome.skipped > 0 {
        info!("skipped {} empty input lines", outcome.skipped);
    }
    let mut text = outcome.lines.join("\n");
    if !text.is_empty() {
        text.push('\n');
    }
    match &args.output {
        Some(path) => std::fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn run_evaluate(args: EvaluateArgs) -> Result<()> {
    let placeholder = CriterionId::undefined();
    let gold = read_corpus(&args.gold, &placeholder)?;
    let pred = read_corpus(&args.pred, &placeholder)?;
    let vocab = match &args.train_vocab {
        Some(path) => word_types(&read_corpus(path, &placeholder)?),
        None => Default::default(),
    };
    let report = eval::score(&gold, &pred, &vocab)?;
    print!("{}", report.render());
    if let Some(path) = &args.output {
        std::fs::write(path, format!("{}\n{}\n", EvalReport::TSV_HEADER, report.tsv_row()))?;
    }
    Ok(())
}

fn run_sweep(args: SweepArgs) -> Result<()> {
    let config = load_config(&args.config, TrainMode::Finetune, args.seed)?;
    let target = criterion(&args.criterion)?;
    let train = read_corpus(&args.train, &target)?;
    let test = read_corpus(&args.test, &target)?;
    let mut rates = Vec::new();
    for part in args.rates.split(',') {
        let rate: f64 = part
            .trim()
            .parse()
            .with_context(|| format!("bad rate {part:?}"))?;
        rates.push(rate);
    }

    let mut variants: Vec<(String, FinetuneInit<f32>)> =
        vec![("fresh".to_string(), FinetuneInit::Fresh)];
    for path in &args.init {
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "pretrained".to_string());
        let ckpt = Checkpoint::<f32>::load(path)
            .with_context(|| format!("reading {}", path.display()))?;
        variants.push((name, FinetuneInit::From(ckpt)));
    }

    let rows = low_resource_sweep(&rates, &train, &test, &variants, &target, &config)?;
    println!("{:<8} {:<10} {:<16} {:>8}", "rate", "instances", "variant", "F1");
    for row in &rows {
        println!(
            "{:<8} {:<10} {:<16} {:>8.4}",
            row.rate, row.instances, row.variant, row.f1
        );
    }
    if let Some(path) = &args.output {
        std::fs::write(path, eval::sweep_tsv(&rows))?;
    }
    Ok(())
}
