//! Training driver: pre-training on the joint corpus, single-criterion
//! fine-tuning, inference and deterministic checkpoints.
//!
//! Batches come from an epoch-shuffled stream of the corpus; one meta step
//! consumes `k + 1` consecutive disjoint batches (k train, one test). All
//! randomness derives from the single config seed, so a `(config, seed,
//! corpus)` triple fully determines every emitted artifact in plain-base
//! mode, including the checkpoint bytes and the metrics log.

use std::path::Path;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{CriterionId, JointCorpus, SegmentedSentence, Vocab};
use crate::error::{Error, Result};
use crate::labeler::{
    augment, criterion_token_id, loss_and_grad, predict, AugmentedInput, Dropout, LossReduction,
    ModelConfig, ModelParams,
};
use crate::meta::{BaseKind, LearningRateSchedule, MetaConfig, MetaOptimizer};
use crate::real::{Dtype, Real};
use crate::rng::{seeded_rng, RngState};
use crate::tags::{decode_tags, encode_tags, Tag};

/// Checkpoint file magic and format version.
const CKPT_MAGIC: &[u8; 4] = b"MCSG";
const CKPT_VERSION: u32 = 1;

/// What a run is for; fine-tuning ignores `k` and runs the plain loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    Pretrain,
    Finetune,
}

impl TrainMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "pretrain" => Ok(Self::Pretrain),
            "finetune" => Ok(Self::Finetune),
            other => Err(Error::Config(format!(
                "mode must be pretrain or finetune, got {other:?}"
            ))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Pretrain => "pretrain",
            Self::Finetune => "finetune",
        }
    }
}

/// Flat training configuration; the on-disk form is `key=value` lines with
/// exactly these fields, and unknown keys are rejected.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub max_len: usize,
    pub batch_size: usize,
    pub alpha: f64,
    pub beta: f64,
    pub k: usize,
    /// Pre-training budget (meta test steps).
    pub meta_test_steps: u64,
    /// Fine-tuning budget.
    pub epochs: u64,
    pub warmup_fraction: f64,
    pub seed: u64,
    pub dropout: f64,
    pub layers: usize,
    pub heads: usize,
    pub hidden: usize,
    pub loss_reduction: LossReduction,
    pub base_optimizer: BaseKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: TrainMode::Pretrain,
            max_len: 64,
            batch_size: 16,
            alpha: 2e-3,
            beta: 2e-3,
            k: 1,
            meta_test_steps: 2000,
            epochs: 5,
            warmup_fraction: 0.1,
            seed: 42,
            dropout: 0.1,
            layers: 2,
            heads: 2,
            hidden: 64,
            loss_reduction: LossReduction::Mean,
            base_optimizer: BaseKind::AdamW,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.alpha <= 0.0 || self.beta <= 0.0 {
            return Err(Error::Config("alpha and beta must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout must lie in [0, 1)".into()));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(Error::Config("warmup_fraction must lie in [0, 1)".into()));
        }
        if self.meta_test_steps == 0 || self.epochs == 0 {
            return Err(Error::Config("step and epoch budgets must be positive".into()));
        }
        ModelConfig::new(1, self.max_len, self.layers, self.heads, self.hidden)?;
        Ok(())
    }

    /// Parses `key=value` lines; `#` comments and blank lines are ignored,
    /// unknown keys are errors, missing keys keep their defaults.
    pub fn parse(content: &str) -> Result<Self> {
        let mut config = Self::default();
        for (i, raw) in content.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", i + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            let bad = |what: &str| {
                Error::Config(format!("line {}: bad {what} value {value:?}", i + 1))
            };
            match key {
                "mode" => config.mode = TrainMode::parse(value)?,
                "max_len" => config.max_len = value.parse().map_err(|_| bad("max_len"))?,
                "batch_size" => {
                    config.batch_size = value.parse().map_err(|_| bad("batch_size"))?
                }
                "alpha" => config.alpha = value.parse().map_err(|_| bad("alpha"))?,
                "beta" => config.beta = value.parse().map_err(|_| bad("beta"))?,
                "k" => config.k = value.parse().map_err(|_| bad("k"))?,
                "meta_test_steps" => {
                    config.meta_test_steps = value.parse().map_err(|_| bad("meta_test_steps"))?
                }
                "epochs" => config.epochs = value.parse().map_err(|_| bad("epochs"))?,
                "warmup_fraction" => {
                    config.warmup_fraction = value.parse().map_err(|_| bad("warmup_fraction"))?
                }
                "seed" => config.seed = value.parse().map_err(|_| bad("seed"))?,
                "dropout" => config.dropout = value.parse().map_err(|_| bad("dropout"))?,
                "layers" => config.layers = value.parse().map_err(|_| bad("layers"))?,
                "heads" => config.heads = value.parse().map_err(|_| bad("heads"))?,
                "hidden" => config.hidden = value.parse().map_err(|_| bad("hidden"))?,
                "loss_reduction" => config.loss_reduction = LossReduction::parse(value)?,
                "base_optimizer" => config.base_optimizer = BaseKind::parse(value)?,
                other => {
                    return Err(Error::Config(format!("line {}: unknown key {other:?}", i + 1)))
                }
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Canonical `key=value` form (fixed key order, round-trips exactly).
    pub fn to_key_values(&self) -> String {
        format!(
            "mode={}\nmax_len={}\nbatch_size={}\nalpha={}\nbeta={}\nk={}\nmeta_test_steps={}\nepochs={}\nwarmup_fraction={}\nseed={}\ndropout={}\nlayers={}\nheads={}\nhidden={}\nloss_reduction={}\nbase_optimizer={}\n",
            self.mode.as_str(),
            self.max_len,
            self.batch_size,
            self.alpha,
            self.beta,
            self.k,
            self.meta_test_steps,
            self.epochs,
            self.warmup_fraction,
            self.seed,
            self.dropout,
            self.layers,
            self.heads,
            self.hidden,
            self.loss_reduction.as_str(),
            self.base_optimizer.as_str(),
        )
    }

    fn model_config(&self, vocab: &Vocab) -> Result<ModelConfig> {
        ModelConfig::for_vocab(vocab, self.max_len, self.layers, self.heads, self.hidden)
    }

    fn meta_config(&self, k: usize, total_steps: u64) -> Result<MetaConfig> {
        let weight_decay = match self.base_optimizer {
            BaseKind::AdamW => 0.01,
            BaseKind::Plain => 0.0,
        };
        Ok(MetaConfig {
            alpha: self.alpha,
            beta: self.beta,
            k,
            base: self.base_optimizer,
            weight_decay,
            schedule: Some(LearningRateSchedule::new(
                1.0,
                self.warmup_fraction,
                total_steps,
            )?),
        })
    }
}

/// Epoch-shuffled index stream over a corpus.
struct BatchSampler {
    rng: ChaCha8Rng,
    order: Vec<u32>,
    cursor: usize,
    n: usize,
}

impl BatchSampler {
    fn new(n: usize, seed: u64) -> Self {
        Self {
            rng: seeded_rng(seed, "sampler"),
            order: Vec::new(),
            cursor: 0,
            n,
        }
    }

    fn restore(n: usize, rng: ChaCha8Rng, order: Vec<u32>, cursor: usize) -> Self {
        Self {
            rng,
            order,
            cursor,
            n,
        }
    }

    fn reshuffle(&mut self) {
        self.order = (0..self.n as u32).collect();
        self.order.shuffle(&mut self.rng);
        self.cursor = 0;
    }

    /// `groups` consecutive disjoint batches from the stream; starts a new
    /// epoch when the current one cannot supply them all.
    fn next_groups(&mut self, groups: usize, batch_size: usize) -> Result<Vec<Vec<usize>>> {
        let need = groups * batch_size;
        if need > self.n {
            return Err(Error::Config(format!(
                "corpus of {} sentences cannot supply {groups} disjoint batches of {batch_size}",
                self.n
            )));
        }
        if self.order.len() - self.cursor < need {
            self.reshuffle();
        }
        let mut out = Vec::with_capacity(groups);
        for _ in 0..groups {
            let slice = &self.order[self.cursor..self.cursor + batch_size];
            out.push(slice.iter().map(|&i| i as usize).collect());
            self.cursor += batch_size;
        }
        Ok(out)
    }

    /// Fresh full-epoch permutation (fine-tuning).
    fn epoch(&mut self) -> Vec<u32> {
        let mut order: Vec<u32> = (0..self.n as u32).collect();
        order.shuffle(&mut self.rng);
        order
    }
}

/// Saved training state: config snapshot, vocabulary (plus hash), all model
/// tensors in declared order, step counter and RNG states. Optimizer moments
/// are not stored, so resuming reproduces the uninterrupted trajectory
/// exactly in plain-base mode.
#[derive(Debug, Clone)]
pub struct Checkpoint<F: Real> {
    pub config: TrainConfig,
    pub vocab: Vocab,
    pub params: ModelParams<F>,
    pub step: u64,
    pub sampler_rng: RngState,
    pub dropout_rng: RngState,
    pub sampler_order: Vec<u32>,
    pub sampler_cursor: u64,
}

struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::CheckpointMismatch("file truncated".into()));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn u128(&mut self) -> Result<u128> {
        Ok(u128::from_le_bytes(self.take(16)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        String::from_utf8(self.take(len)?.to_vec())
            .map_err(|_| Error::CheckpointMismatch("invalid UTF-8".into()))
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn put_rng(out: &mut Vec<u8>, state: &RngState) {
    out.extend_from_slice(&state.seed);
    out.extend_from_slice(&state.stream.to_le_bytes());
    out.extend_from_slice(&state.word_pos.to_le_bytes());
}

fn get_rng(r: &mut ByteReader<'_>) -> Result<RngState> {
    let seed: [u8; 32] = r.take(32)?.try_into().unwrap();
    let stream = r.u64()?;
    let word_pos = r.u128()?;
    Ok(RngState {
        seed,
        stream,
        word_pos,
    })
}

impl<F: Real> Checkpoint<F> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CKPT_MAGIC);
        out.extend_from_slice(&CKPT_VERSION.to_le_bytes());
        out.push(F::DTYPE.tag());
        put_str(&mut out, &self.config.to_key_values());

        let chars = self.vocab.chars_in_order();
        out.extend_from_slice(&(chars.len() as u32).to_le_bytes());
        for c in chars {
            out.extend_from_slice(&(c as u32).to_le_bytes());
        }
        let criteria = self.vocab.criteria();
        out.extend_from_slice(&(criteria.len() as u32).to_le_bytes());
        for c in criteria {
            put_str(&mut out, c.name());
        }
        out.extend_from_slice(&self.vocab.hash().to_le_bytes());

        out.extend_from_slice(&self.step.to_le_bytes());
        put_rng(&mut out, &self.sampler_rng);
        put_rng(&mut out, &self.dropout_rng);
        out.extend_from_slice(&(self.sampler_order.len() as u64).to_le_bytes());
        for &i in &self.sampler_order {
            out.extend_from_slice(&i.to_le_bytes());
        }
        out.extend_from_slice(&self.sampler_cursor.to_le_bytes());

        let tensors = self.params.named_tensors();
        out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for (name, rows, cols, values) in tensors {
            put_str(&mut out, &name);
            out.extend_from_slice(&(rows as u32).to_le_bytes());
            out.extend_from_slice(&(cols as u32).to_le_bytes());
            for &v in values {
                v.write_le(&mut out);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader { buf: bytes, pos: 0 };
        if r.take(4)? != CKPT_MAGIC {
            return Err(Error::CheckpointMismatch("not a checkpoint file".into()));
        }
        let version = r.u32()?;
        if version != CKPT_VERSION {
            return Err(Error::CheckpointMismatch(format!(
                "unsupported version {version}"
            )));
        }
        let dtype = Dtype::from_tag(r.u8()?)
            .ok_or_else(|| Error::CheckpointMismatch("unknown dtype tag".into()))?;
        if dtype != F::DTYPE {
            return Err(Error::CheckpointMismatch(format!(
                "checkpoint holds {dtype:?} tensors, expected {:?}",
                F::DTYPE
            )));
        }
        let config = TrainConfig::parse(&r.string()?)?;

        let n_chars = r.u32()? as usize;
        let mut chars = Vec::with_capacity(n_chars);
        for _ in 0..n_chars {
            let cp = r.u32()?;
            chars.push(char::from_u32(cp).ok_or_else(|| {
                Error::CheckpointMismatch(format!("invalid code point {cp:#x}"))
            })?);
        }
        let n_crit = r.u32()? as usize;
        let mut criteria = Vec::with_capacity(n_crit);
        for _ in 0..n_crit {
            criteria.push(CriterionId::new(&r.string()?)?);
        }
        let vocab = Vocab::from_parts(chars, criteria)?;
        let stored_hash = r.u64()?;
        if stored_hash != vocab.hash() {
            return Err(Error::CheckpointMismatch("vocabulary hash mismatch".into()));
        }

        let step = r.u64()?;
        let sampler_rng = get_rng(&mut r)?;
        let dropout_rng = get_rng(&mut r)?;
        let n_order = r.u64()? as usize;
        let mut sampler_order = Vec::with_capacity(n_order);
        for _ in 0..n_order {
            sampler_order.push(r.u32()?);
        }
        let sampler_cursor = r.u64()?;

        let model_config = config.model_config(&vocab)?;
        let specs = model_config.tensor_specs();
        let n_tensors = r.u32()? as usize;
        if n_tensors != specs.len() {
            return Err(Error::CheckpointMismatch(format!(
                "{n_tensors} tensors in file, architecture declares {}",
                specs.len()
            )));
        }
        let mut data = vec![F::zero(); model_config.param_count()];
        for spec in &specs {
            let name = r.string()?;
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            if name != spec.name || rows != spec.rows || cols != spec.cols {
                return Err(Error::CheckpointMismatch(format!(
                    "tensor {name} ({rows}x{cols}) does not match declared {} ({}x{})",
                    spec.name, spec.rows, spec.cols
                )));
            }
            let width = F::DTYPE.byte_width();
            let raw = r.take(rows * cols * width)?;
            for (i, slot) in data[spec.range()].iter_mut().enumerate() {
                *slot = F::read_le(&raw[i * width..]);
            }
        }
        let params = ModelParams::from_data(model_config, data)?;
        Ok(Self {
            config,
            vocab,
            params,
            step,
            sampler_rng,
            dropout_rng,
            sampler_order,
            sampler_cursor: sampler_cursor,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Element width stored in a checkpoint file, without loading tensors.
    pub fn peek_dtype(path: &Path) -> Result<Dtype> {
        let mut header = [0u8; 9];
        let bytes = std::fs::read(path)?;
        if bytes.len() < 9 {
            return Err(Error::CheckpointMismatch("file truncated".into()));
        }
        header.copy_from_slice(&bytes[..9]);
        if &header[..4] != CKPT_MAGIC {
            return Err(Error::CheckpointMismatch("not a checkpoint file".into()));
        }
        Dtype::from_tag(header[8])
            .ok_or_else(|| Error::CheckpointMismatch("unknown dtype tag".into()))
    }
}

/// A finished run: final checkpoint plus one metrics line per step.
#[derive(Debug)]
pub struct TrainOutcome<F: Real> {
    pub checkpoint: Checkpoint<F>,
    pub metrics: Vec<String>,
    /// Loss/gradient evaluations performed by the run.
    pub grad_evals: u64,
}

/// Starting point for fine-tuning.
pub enum FinetuneInit<F: Real> {
    /// Seeded fresh initialization (the "no pre-training" ablation arm).
    Fresh,
    From(Checkpoint<F>),
}

type Example = (AugmentedInput, Vec<Tag>);

fn build_examples(
    sentences: &[SegmentedSentence],
    vocab: &Vocab,
    override_criterion: Option<&CriterionId>,
    max_len: usize,
) -> Result<Vec<Example>> {
    sentences
        .iter()
        .map(|s| {
            let (input, kept) = augment(s, vocab, override_criterion, max_len)?;
            let tags = encode_tags(kept.word_lengths());
            Ok((input, tags))
        })
        .collect()
}

fn gather(examples: &[Example], indices: &[usize]) -> Vec<Example> {
    indices.iter().map(|&i| examples[i].clone()).collect()
}

fn pretrain_line(diag: &crate::meta::MetaStepDiagnostics) -> String {
    let mut line = format!("step:{}", diag.step);
    for (i, loss) in diag.inner_losses.iter().enumerate() {
        line.push_str(&format!("\tinner_loss_{}:{:.6}", i + 1, loss));
    }
    line.push_str(&format!(
        "\tmeta_loss:{:.6}\talpha:{:.8}\tbeta:{:.8}",
        diag.meta_loss, diag.alpha, diag.beta
    ));
    line
}

/// Pre-trains on the joint corpus with the meta optimizer and returns the
/// final meta parameters θ₀. Performs exactly `(k + 1) × meta_test_steps`
/// loss/gradient evaluations.
pub fn pretrain<F: Real>(corpus: &JointCorpus, config: &TrainConfig) -> Result<TrainOutcome<F>> {
    config.validate()?;
    if config.mode != TrainMode::Pretrain {
        return Err(Error::Config("pretrain requires mode=pretrain".into()));
    }
    if corpus.sentences.is_empty() {
        return Err(Error::EmptyCorpus("pre-training corpus is empty"));
    }
    pretrain_partial(corpus, config, config.meta_test_steps)
}

/// Runs the first `stop_at` meta test steps of a pre-training run whose
/// schedule horizon is the full configured budget, as if the run had been
/// interrupted; the returned checkpoint can be taken up by
/// [`resume_pretrain`].
pub fn pretrain_partial<F: Real>(
    corpus: &JointCorpus,
    config: &TrainConfig,
    stop_at: u64,
) -> Result<TrainOutcome<F>> {
    config.validate()?;
    if config.mode != TrainMode::Pretrain {
        return Err(Error::Config("pretrain requires mode=pretrain".into()));
    }
    if corpus.sentences.is_empty() {
        return Err(Error::EmptyCorpus("pre-training corpus is empty"));
    }
    if stop_at > config.meta_test_steps {
        return Err(Error::Config(format!(
            "stop step {stop_at} exceeds the budget of {} meta test steps",
            config.meta_test_steps
        )));
    }
    let vocab = corpus.vocab.clone();
    let params = ModelParams::init(config.model_config(&vocab)?, config.seed);
    let sampler = BatchSampler::new(corpus.sentences.len(), config.seed);
    let dropout_rng = seeded_rng(config.seed, "dropout");
    run_pretrain(corpus, config, vocab, params, 0, stop_at, sampler, dropout_rng)
}

/// Continues a pre-training run from a checkpoint over the same corpus.
/// In plain-base mode the continued trajectory is identical to an
/// uninterrupted run.
pub fn resume_pretrain<F: Real>(
    checkpoint: &Checkpoint<F>,
    corpus: &JointCorpus,
    config: &TrainConfig,
) -> Result<TrainOutcome<F>> {
    config.validate()?;
    if checkpoint.vocab.hash() != corpus.vocab.hash() {
        return Err(Error::CheckpointMismatch(
            "checkpoint vocabulary does not match the corpus".into(),
        ));
    }
    let sampler = BatchSampler::restore(
        corpus.sentences.len(),
        checkpoint.sampler_rng.restore(),
        checkpoint.sampler_order.clone(),
        checkpoint.sampler_cursor as usize,
    );
    run_pretrain(
        corpus,
        config,
        checkpoint.vocab.clone(),
        checkpoint.params.clone(),
        checkpoint.step,
        config.meta_test_steps,
        sampler,
        checkpoint.dropout_rng.restore(),
    )
}

#[allow(clippy::too_many_arguments)]
fn run_pretrain<F: Real>(
    corpus: &JointCorpus,
    config: &TrainConfig,
    vocab: Vocab,
    params: ModelParams<F>,
    start_step: u64,
    end_step: u64,
    mut sampler: BatchSampler,
    mut dropout_rng: ChaCha8Rng,
) -> Result<TrainOutcome<F>> {
    let examples = build_examples(&corpus.sentences, &vocab, None, config.max_len)?;
    let meta_config = config.meta_config(config.k, config.meta_test_steps)?;
    let mut opt = MetaOptimizer::with_progress(
        params,
        meta_config,
        start_step,
        (config.k as u64 + 1) * start_step,
    )?;
    let mut metrics = Vec::with_capacity((end_step - start_step) as usize);

    for _ in start_step..end_step {
        let mut groups = sampler.next_groups(config.k + 1, config.batch_size)?;
        let test_indices = groups.pop().expect("k+1 groups");
        let train_batches: Vec<Vec<Example>> =
            groups.iter().map(|g| gather(&examples, g)).collect();
        let test_batch = gather(&examples, &test_indices);

        let dropout_rate = config.dropout;
        let reduction = config.loss_reduction;
        let diag = opt.meta_step(&train_batches, &test_batch, |p, batch| {
            let ctx = (dropout_rate > 0.0).then(|| Dropout {
                rate: dropout_rate,
                rng: &mut dropout_rng,
            });
            loss_and_grad(p, batch, reduction, ctx).map(|(l, g)| (l, g.into_values()))
        })?;
        log::debug!("{}", pretrain_line(&diag));
        metrics.push(pretrain_line(&diag));
    }

    debug_assert_eq!(opt.grad_evals(), (config.k as u64 + 1) * end_step);
    let grad_evals = opt.grad_evals();
    let checkpoint = Checkpoint {
        config: config.clone(),
        vocab,
        params: opt.into_theta0(),
        step: end_step,
        sampler_rng: RngState::capture(&sampler.rng),
        dropout_rng: RngState::capture(&dropout_rng),
        sampler_order: sampler.order.clone(),
        sampler_cursor: sampler.cursor as u64,
    };
    Ok(TrainOutcome {
        checkpoint,
        metrics,
        grad_evals,
    })
}

/// Fine-tunes on one criterion with the plain (non-meta) loop for the
/// configured epochs. Downstream criteria use the `unc` token; pre-training
/// criteria use their own.
pub fn finetune<F: Real>(
    init: &FinetuneInit<F>,
    train: &[SegmentedSentence],
    criterion_override: &CriterionId,
    config: &TrainConfig,
) -> Result<TrainOutcome<F>> {
    finetune_observed(init, train, criterion_override, config, |_, _, _| {})
}

/// [`finetune`] with a per-step observer `(completed_steps, θ, vocab)`,
/// for harnesses that track convergence speed.
pub fn finetune_observed<F: Real>(
    init: &FinetuneInit<F>,
    train: &[SegmentedSentence],
    criterion_override: &CriterionId,
    config: &TrainConfig,
    mut observer: impl FnMut(u64, &ModelParams<F>, &Vocab),
) -> Result<TrainOutcome<F>> {
    config.validate()?;
    if config.mode != TrainMode::Finetune {
        return Err(Error::Config("finetune requires mode=finetune".into()));
    }
    if train.is_empty() {
        return Err(Error::EmptyCorpus("fine-tuning set is empty"));
    }

    let (vocab, params): (Vocab, ModelParams<F>) = match init {
        FinetuneInit::Fresh => {
            let vocab =
                Vocab::build_with_criteria(train, std::slice::from_ref(criterion_override));
            let params = ModelParams::init(config.model_config(&vocab)?, config.seed);
            (vocab, params)
        }
        FinetuneInit::From(ckpt) => {
            let same_dims = ckpt.config.layers == config.layers
                && ckpt.config.heads == config.heads
                && ckpt.config.hidden == config.hidden
                && ckpt.config.max_len == config.max_len;
            if !same_dims {
                return Err(Error::CheckpointMismatch(format!(
                    "checkpoint architecture {}x{}x{} (max_len {}) differs from config {}x{}x{} (max_len {})",
                    ckpt.config.layers, ckpt.config.heads, ckpt.config.hidden, ckpt.config.max_len,
                    config.layers, config.heads, config.hidden, config.max_len,
                )));
            }
            if criterion_token_id(&ckpt.vocab, criterion_override).is_none() {
                return Err(Error::UnknownCriterion(
                    criterion_override.name().to_string(),
                ));
            }
            (ckpt.vocab.clone(), ckpt.params.clone())
        }
    };

    let examples = build_examples(train, &vocab, Some(criterion_override), config.max_len)?;
    let batches_per_epoch = examples.len().div_ceil(config.batch_size) as u64;
    let total_steps = config.epochs * batches_per_epoch;
    // "Without meta learning": the k = 0 loop is exactly the base optimizer.
    let meta_config = config.meta_config(0, total_steps)?;
    let mut opt = MetaOptimizer::new(params, meta_config)?;
    let mut sampler = BatchSampler::new(examples.len(), config.seed);
    let mut dropout_rng = seeded_rng(config.seed, "dropout");
    let mut metrics = Vec::with_capacity(total_steps as usize);
    let mut step = 0u64;

    for _ in 0..config.epochs {
        let order = sampler.epoch();
        for chunk in order.chunks(config.batch_size) {
            let indices: Vec<usize> = chunk.iter().map(|&i| i as usize).collect();
            let batch = gather(&examples, &indices);
            let dropout_rate = config.dropout;
            let reduction = config.loss_reduction;
            let diag = opt.meta_step(&[], &batch, |p, b| {
                let ctx = (dropout_rate > 0.0).then(|| Dropout {
                    rate: dropout_rate,
                    rng: &mut dropout_rng,
                });
                loss_and_grad(p, b, reduction, ctx).map(|(l, g)| (l, g.into_values()))
            })?;
            step += 1;
            metrics.push(format!(
                "step:{}\tloss:{:.6}\trate:{:.8}",
                step - 1,
                diag.meta_loss,
                diag.beta
            ));
            observer(step, opt.theta0(), &vocab);
        }
    }

    let grad_evals = opt.grad_evals();
    let checkpoint = Checkpoint {
        config: config.clone(),
        vocab,
        params: opt.into_theta0(),
        step,
        sampler_rng: RngState::capture(&sampler.rng),
        dropout_rng: RngState::capture(&dropout_rng),
        sampler_order: Vec::new(),
        sampler_cursor: 0,
    };
    Ok(TrainOutcome {
        checkpoint,
        metrics,
        grad_evals,
    })
}

/// Word lengths predicted for a raw character sequence.
///
/// Sequences longer than the text window are processed in consecutive
/// windows and the decoded words concatenated, so the output always tiles
/// the full input.
pub fn predict_word_lengths<F: Real>(
    params: &ModelParams<F>,
    vocab: &Vocab,
    chars: &[char],
    criterion: &CriterionId,
    max_len: usize,
) -> Result<Vec<usize>> {
    let capacity = max_len
        .checked_sub(crate::labeler::SPECIAL_POSITIONS)
        .filter(|&c| c > 0)
        .ok_or(Error::EmptyAfterTruncation { max_len })?;
    if chars.is_empty() {
        return Err(Error::EmptyCorpus("cannot segment an empty line"));
    }
    let mut lengths = Vec::new();
    for chunk in chars.chunks(capacity) {
        let placeholder =
            SegmentedSentence::new(chunk.to_vec(), vec![chunk.len()], criterion.clone())?;
        let (input, _) = augment(&placeholder, vocab, Some(criterion), max_len)?;
        let tags = predict(params, &input)?;
        lengths.extend(decode_tags(&tags, chunk)?);
    }
    Ok(lengths)
}

/// Inference output: segmented lines plus the count of skipped empty lines.
pub struct InferOutcome {
    pub lines: Vec<String>,
    pub skipped: usize,
}

/// Zero-shot / fine-tuned inference over raw clauses. Dropout is off;
/// empty lines are skipped with a warning.
pub fn infer<F: Real>(
    checkpoint: &Checkpoint<F>,
    lines: &[Vec<char>],
    criterion: &CriterionId,
) -> Result<InferOutcome> {
    if criterion_token_id(&checkpoint.vocab, criterion).is_none() {
        return Err(Error::UnknownCriterion(criterion.name().to_string()));
    }
    let mut out = Vec::with_capacity(lines.len());
    let mut skipped = 0;
    for (i, chars) in lines.iter().enumerate() {
        if chars.is_empty() {
            log::warn!("line {}: empty input line skipped", i + 1);
            skipped += 1;
            continue;
        }
        let lengths = predict_word_lengths(
            &checkpoint.params,
            &checkpoint.vocab,
            chars,
            criterion,
            checkpoint.config.max_len,
        )?;
        let sentence = SegmentedSentence::new(chars.clone(), lengths, criterion.clone())?;
        out.push(sentence.words().join(" "));
    }
    Ok(InferOutcome {
        lines: out,
        skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::build_joint_corpus;

    fn crit(name: &str) -> CriterionId {
        CriterionId::new(name).unwrap()
    }

    /// Tiny two-criterion corpus: runs vs singles over the same alphabet.
    fn tiny_corpus(n: usize) -> JointCorpus {
        let mut a = Vec::new();
        let mut b = Vec::new();
        for i in 0..n {
            let w = match i % 3 {
                0 => vec!["水火", "木"],
                1 => vec!["木", "金土"],
                _ => vec!["水", "火", "木"],
            };
            a.push(SegmentedSentence::from_words(&w, crit("runa")).unwrap());
            let joined: String = w.concat();
            let singles: Vec<String> = joined.chars().map(String::from).collect();
            b.push(SegmentedSentence::from_words(&singles, crit("sing")).unwrap());
        }
        build_joint_corpus(&[a, b], 0.1, 7).unwrap()
    }

    fn small_config(mode: TrainMode) -> TrainConfig {
        TrainConfig {
            mode,
            max_len: 16,
            batch_size: 4,
            alpha: 1e-2,
            beta: 1e-2,
            k: 1,
            meta_test_steps: 10,
            epochs: 2,
            warmup_fraction: 0.1,
            seed: 5,
            dropout: 0.1,
            layers: 1,
            heads: 2,
            hidden: 8,
            loss_reduction: LossReduction::Mean,
            base_optimizer: BaseKind::Plain,
        }
    }

    #[test]
    fn config_roundtrip_and_unknown_keys() {
        let config = small_config(TrainMode::Finetune);
        let text = config.to_key_values();
        let parsed = TrainConfig::parse(&text).unwrap();
        assert_eq!(parsed, config);

        assert!(TrainConfig::parse("bogus_key=1").is_err());
        assert!(TrainConfig::parse("batch_size=zero").is_err());
        assert!(TrainConfig::parse("batch_size=0").is_err());
        // Comments and blank lines are tolerated.
        let with_comments = format!("# desk scale\n\n{text}");
        assert_eq!(TrainConfig::parse(&with_comments).unwrap(), config);
    }

    #[test]
    fn pretrain_counts_grad_evals_exactly() {
        let corpus = tiny_corpus(20);
        let mut config = small_config(TrainMode::Pretrain);
        config.k = 1;
        config.meta_test_steps = 7;
        // (k+1) × steps evaluations; checked via the metrics line count and
        // the meta optimizer's internal counter (debug_assert in the driver).
        let outcome = pretrain::<f32>(&corpus, &config).unwrap();
        assert_eq!(outcome.metrics.len(), 7);
        assert!(outcome.metrics[0].starts_with("step:0\tinner_loss_1:"));
        assert!(outcome.metrics[0].contains("\tmeta_loss:"));
        assert_eq!(outcome.checkpoint.step, 7);
    }

    #[test]
    fn pretrain_is_deterministic() {
        let corpus = tiny_corpus(20);
        let config = small_config(TrainMode::Pretrain);
        let a = pretrain::<f32>(&corpus, &config).unwrap();
        let b = pretrain::<f32>(&corpus, &config).unwrap();
        assert_eq!(a.checkpoint.to_bytes(), b.checkpoint.to_bytes());
        assert_eq!(a.metrics, b.metrics);
        let mut other = config;
        other.seed = 6;
        let c = pretrain::<f32>(&corpus, &other).unwrap();
        assert_ne!(a.checkpoint.to_bytes(), c.checkpoint.to_bytes());
    }

    #[test]
    fn checkpoint_roundtrips_bytes() {
        let corpus = tiny_corpus(12);
        let config = small_config(TrainMode::Pretrain);
        let outcome = pretrain::<f32>(&corpus, &config).unwrap();
        let bytes = outcome.checkpoint.to_bytes();
        let loaded = Checkpoint::<f32>::from_bytes(&bytes).unwrap();
        assert_eq!(loaded.to_bytes(), bytes);
        assert_eq!(loaded.params.values(), outcome.checkpoint.params.values());
        // Wrong dtype is rejected.
        assert!(Checkpoint::<f64>::from_bytes(&bytes).is_err());
    }

    #[test]
    fn resume_reproduces_uninterrupted_trajectory() {
        let corpus = tiny_corpus(20);
        let mut config = small_config(TrainMode::Pretrain);
        config.dropout = 0.1;
        config.meta_test_steps = 12;
        let full = pretrain::<f32>(&corpus, &config).unwrap();

        // Interrupt at step 6 of the same 12-step schedule, then continue.
        let half = pretrain_partial::<f32>(&corpus, &config, 6).unwrap();
        assert_eq!(half.checkpoint.step, 6);
        let resumed = resume_pretrain(&half.checkpoint, &corpus, &config).unwrap();
        assert_eq!(
            resumed.checkpoint.params.values(),
            full.checkpoint.params.values()
        );
        let mut all_metrics = half.metrics.clone();
        all_metrics.extend(resumed.metrics.clone());
        assert_eq!(all_metrics, full.metrics);
    }

    #[test]
    fn pretrain_k0_equals_plain_supervised_loop() {
        let corpus = tiny_corpus(20);
        let mut config = small_config(TrainMode::Pretrain);
        config.k = 0;
        config.dropout = 0.0;
        config.meta_test_steps = 9;
        let driver = pretrain::<f64>(&corpus, &config).unwrap();

        // Oracle: same sampling and schedule, hand-rolled descent.
        let vocab = corpus.vocab.clone();
        let mut params =
            ModelParams::<f64>::init(config.model_config(&vocab).unwrap(), config.seed);
        let examples = build_examples(&corpus.sentences, &vocab, None, config.max_len).unwrap();
        let mut sampler = BatchSampler::new(corpus.sentences.len(), config.seed);
        let schedule = LearningRateSchedule::new(1.0, config.warmup_fraction, 9).unwrap();
        for step in 0..9u64 {
            let groups = sampler.next_groups(1, config.batch_size).unwrap();
            let batch = gather(&examples, &groups[0]);
            let (_, grads) =
                loss_and_grad(&params, &batch, config.loss_reduction, None).unwrap();
            let rate = config.beta * schedule.scale(step);
            for (p, g) in params.values_mut().iter_mut().zip(grads.values()) {
                *p -= rate * g;
            }
        }
        assert_eq!(driver.checkpoint.params.values(), params.values());
    }

    #[test]
    fn pretrain_rejects_oversized_batch_demand() {
        let corpus = tiny_corpus(3);
        let mut config = small_config(TrainMode::Pretrain);
        config.batch_size = 4;
        config.k = 2;
        assert!(pretrain::<f32>(&corpus, &config).is_err());
    }

    #[test]
    fn finetune_step_count_is_epochs_times_batches() {
        let corpus = tiny_corpus(45);
        let train = &corpus.sentences[..45];
        let mut config = small_config(TrainMode::Finetune);
        config.batch_size = 9;
        config.epochs = 5;
        let mut seen = Vec::new();
        let outcome = finetune_observed(
            &FinetuneInit::<f32>::Fresh,
            train,
            &crit("unc"),
            &config,
            |step, _, _| seen.push(step),
        )
        .unwrap();
        assert_eq!(outcome.metrics.len(), 25);
        assert_eq!(seen.len(), 25);
        assert_eq!(outcome.checkpoint.step, 25);
    }

    #[test]
    fn finetune_is_deterministic() {
        let corpus = tiny_corpus(16);
        let config = small_config(TrainMode::Finetune);
        let a = finetune(&FinetuneInit::<f32>::Fresh, &corpus.sentences, &crit("unc"), &config)
            .unwrap();
        let b = finetune(&FinetuneInit::<f32>::Fresh, &corpus.sentences, &crit("unc"), &config)
            .unwrap();
        assert_eq!(a.checkpoint.to_bytes(), b.checkpoint.to_bytes());
        assert_eq!(a.metrics, b.metrics);
    }

    #[test]
    fn finetune_from_checkpoint_checks_criterion_and_dims() {
        let corpus = tiny_corpus(16);
        let mut pre_config = small_config(TrainMode::Pretrain);
        pre_config.meta_test_steps = 2;
        let pre = pretrain::<f32>(&corpus, &pre_config).unwrap();

        let mut ft = small_config(TrainMode::Finetune);
        ft.epochs = 1;
        // Unknown criterion that is not `unc` is rejected.
        let err = finetune(
            &FinetuneInit::From(pre.checkpoint.clone()),
            &corpus.sentences,
            &crit("wtb"),
            &ft,
        )
        .unwrap_err();
        assert!(matches!(err, Error::UnknownCriterion(_)));
        // `unc` always works.
        finetune(
            &FinetuneInit::From(pre.checkpoint.clone()),
            &corpus.sentences,
            &crit("unc"),
            &ft,
        )
        .unwrap();
        // Mismatched dims are rejected.
        ft.hidden = 16;
        let err = finetune(
            &FinetuneInit::From(pre.checkpoint),
            &corpus.sentences,
            &crit("unc"),
            &ft,
        )
        .unwrap_err();
        assert!(matches!(err, Error::CheckpointMismatch(_)));
    }

    #[test]
    fn infer_is_deterministic_and_skips_empty_lines() {
        let corpus = tiny_corpus(12);
        let mut config = small_config(TrainMode::Pretrain);
        config.meta_test_steps = 2;
        let pre = pretrain::<f32>(&corpus, &config).unwrap();
        let lines: Vec<Vec<char>> = vec![
            "水火木".chars().collect(),
            Vec::new(),
            "金土".chars().collect(),
        ];
        let a = infer(&pre.checkpoint, &lines, &crit("unc")).unwrap();
        let b = infer(&pre.checkpoint, &lines, &crit("unc")).unwrap();
        assert_eq!(a.lines, b.lines);
        assert_eq!(a.skipped, 1);
        assert_eq!(a.lines.len(), 2);
        // Character stream is preserved.
        assert_eq!(a.lines[0].replace(' ', ""), "水火木");

        let empty = infer(&pre.checkpoint, &[], &crit("unc")).unwrap();
        assert!(empty.lines.is_empty());
        assert_eq!(empty.skipped, 0);
    }

    #[test]
    fn long_lines_are_segmented_in_windows() {
        let corpus = tiny_corpus(12);
        let mut config = small_config(TrainMode::Pretrain);
        config.meta_test_steps = 2;
        config.max_len = 8;
        let pre = pretrain::<f32>(&corpus, &config).unwrap();
        let long: Vec<char> = "水火木金土".chars().cycle().take(23).collect();
        let lengths = predict_word_lengths(
            &pre.checkpoint.params,
            &pre.checkpoint.vocab,
            &long,
            &crit("unc"),
            config.max_len,
        )
        .unwrap();
        assert_eq!(lengths.iter().sum::<usize>(), 23);
    }
}
