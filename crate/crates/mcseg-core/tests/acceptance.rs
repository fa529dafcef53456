//! Acceptance suite: every criterion prints one `acceptance NN <name>: PASS`
//! line (run with `--nocapture` to see them on success).
//!
//! The trend criteria (04–07) run on synthetic segmentation conventions over
//! one shared text distribution: `runa` groups maximal same-class runs into
//! words, `sing` splits every character, and the held-out downstream
//! convention `mixc` keeps digit runs whole but splits the other characters.
//! `runa` and `sing` agree on nothing but single-character runs, which is
//! exactly the conflicting-criteria phenomenon the criterion tokens resolve.

use std::collections::HashSet;
use std::sync::OnceLock;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use mcseg_core::corpus::{build_joint_corpus, sample_low_resource};
use mcseg_core::eval::{evaluate_model, low_resource_sweep, score};
use mcseg_core::labeler::{augment, loss_and_grad, LossReduction, ModelConfig, ModelParams};
use mcseg_core::meta::{BaseKind, MetaConfig, MetaOptimizer};
use mcseg_core::rng::seeded_rng;
use mcseg_core::tags::{decode_tags, encode_tags, is_well_formed, Tag};
use mcseg_core::train::{
    finetune, finetune_observed, pretrain, Checkpoint, FinetuneInit, TrainConfig, TrainMode,
};
use mcseg_core::{CriterionId, Result, SegmentedSentence, Vocab};

const MAX_LEN: usize = 32;
const PRETRAIN_STEPS: u64 = 1200;

const HANZI: &[char] = &['甲', '乙', '丙', '丁', '戊', '己', '庚', '辛'];

fn crit(name: &str) -> CriterionId {
    CriterionId::new(name).unwrap()
}

fn is_hanzi(c: char) -> bool {
    HANZI.contains(&c)
}

/// Random text of alternating-class runs; every run 1–3 characters.
fn gen_text(rng: &mut ChaCha8Rng) -> Vec<char> {
    let n_runs = rng.random_range(3..=6);
    let mut chars = Vec::new();
    for _ in 0..n_runs {
        let hanzi = rng.random_bool(0.6);
        let len = rng.random_range(1..=3);
        for _ in 0..len {
            if hanzi {
                chars.push(HANZI[rng.random_range(0..HANZI.len())]);
            } else {
                chars.push(char::from(b'0' + rng.random_range(0..10) as u8));
            }
        }
    }
    chars
}

/// `runa`: each maximal same-class run is one word.
fn runs_lengths(chars: &[char]) -> Vec<usize> {
    let mut lengths = Vec::new();
    let mut len = 0;
    for (i, &c) in chars.iter().enumerate() {
        len += 1;
        let last = i + 1 == chars.len();
        if last || is_hanzi(c) != is_hanzi(chars[i + 1]) {
            lengths.push(len);
            len = 0;
        }
    }
    lengths
}

/// `sing`: every character is a word.
fn singles_lengths(chars: &[char]) -> Vec<usize> {
    vec![1; chars.len()]
}

/// `mixc` (downstream): digit runs are one word, other characters split.
fn mixed_lengths(chars: &[char]) -> Vec<usize> {
    let mut lengths = Vec::new();
    let mut digit_run = 0;
    for (i, &c) in chars.iter().enumerate() {
        if !is_hanzi(c) {
            digit_run += 1;
            let last = i + 1 == chars.len();
            if last || is_hanzi(chars[i + 1]) {
                lengths.push(digit_run);
                digit_run = 0;
            }
        } else {
            lengths.push(1);
        }
    }
    lengths
}

fn dataset(
    name: &str,
    rule: fn(&[char]) -> Vec<usize>,
    n: usize,
    stream: &str,
) -> Vec<SegmentedSentence> {
    let mut rng = seeded_rng(20240101, stream);
    let criterion = crit(name);
    (0..n)
        .map(|_| {
            let chars = gen_text(&mut rng);
            let lengths = rule(&chars);
            SegmentedSentence::new(chars, lengths, criterion.clone()).unwrap()
        })
        .collect()
}

fn pretrain_config(k: usize, steps: u64, seed: u64) -> TrainConfig {
    TrainConfig {
        mode: TrainMode::Pretrain,
        max_len: MAX_LEN,
        batch_size: 16,
        alpha: 2e-3,
        beta: 2e-3,
        k,
        meta_test_steps: steps,
        epochs: 5,
        warmup_fraction: 0.1,
        seed,
        dropout: 0.1,
        layers: 2,
        heads: 2,
        hidden: 64,
        loss_reduction: LossReduction::Mean,
        base_optimizer: BaseKind::AdamW,
    }
}

fn finetune_config(epochs: u64, batch_size: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        mode: TrainMode::Finetune,
        epochs,
        batch_size,
        seed,
        ..pretrain_config(1, PRETRAIN_STEPS, seed)
    }
}

fn downstream_train() -> &'static Vec<SegmentedSentence> {
    static DATA: OnceLock<Vec<SegmentedSentence>> = OnceLock::new();
    DATA.get_or_init(|| dataset("mixc", mixed_lengths, 200, "c-train"))
}

fn downstream_dev() -> &'static Vec<SegmentedSentence> {
    static DATA: OnceLock<Vec<SegmentedSentence>> = OnceLock::new();
    DATA.get_or_init(|| dataset("mixc", mixed_lengths, 60, "c-dev"))
}

/// The shared k=1 pre-trained checkpoint (criteria 04–07).
fn pretrained_k1() -> &'static Checkpoint<f32> {
    static CKPT: OnceLock<Checkpoint<f32>> = OnceLock::new();
    CKPT.get_or_init(|| {
        let a = dataset("runa", runs_lengths, 400, "a-train");
        let b = dataset("sing", singles_lengths, 400, "b-train");
        let joint = build_joint_corpus(&[a, b], 0.1, 7).unwrap();
        pretrain::<f32>(&joint, &pretrain_config(1, PRETRAIN_STEPS, 42))
            .unwrap()
            .checkpoint
    })
}

/// The k=0 ablation arm over the same corpus and budget (criterion 06).
fn pretrained_k0() -> &'static Checkpoint<f32> {
    static CKPT: OnceLock<Checkpoint<f32>> = OnceLock::new();
    CKPT.get_or_init(|| {
        let a = dataset("runa", runs_lengths, 400, "a-train");
        let b = dataset("sing", singles_lengths, 400, "b-train");
        let joint = build_joint_corpus(&[a, b], 0.1, 7).unwrap();
        pretrain::<f32>(&joint, &pretrain_config(0, PRETRAIN_STEPS, 42))
            .unwrap()
            .checkpoint
    })
}

fn model_f1(
    params: &ModelParams<f32>,
    vocab: &Vocab,
    data: &[SegmentedSentence],
    criterion_override: Option<&CriterionId>,
) -> f64 {
    evaluate_model(params, vocab, data, criterion_override, MAX_LEN, &HashSet::new())
        .unwrap()
        .f1
}

#[test]
fn acceptance_01_codec_soundness() {
    let mut rng = seeded_rng(1, "codec");
    for _ in 0..10_000 {
        // decode ∘ encode identity on random segmentations.
        let n_words = rng.random_range(1..12);
        let lengths: Vec<usize> = (0..n_words).map(|_| rng.random_range(1..6)).collect();
        let chars = vec!['字'; lengths.iter().sum()];
        let tags = encode_tags(&lengths);
        assert!(is_well_formed(&tags));
        assert_eq!(decode_tags(&tags, &chars).unwrap(), lengths);

        // Repair of arbitrary label noise always yields a valid segmentation.
        let n = rng.random_range(1..24);
        let noise: Vec<Tag> = (0..n)
            .map(|_| Tag::from_index(rng.random_range(0..4)).unwrap())
            .collect();
        let chars = vec!['字'; n];
        let lengths = decode_tags(&noise, &chars).unwrap();
        assert!(!lengths.is_empty());
        assert!(lengths.iter().all(|&l| l >= 1));
        assert_eq!(lengths.iter().sum::<usize>(), n);
    }
    println!("acceptance 01 codec-soundness: PASS");
}

#[test]
fn acceptance_02_gradient_correctness() {
    // Central finite differences (step 1e-5) against the analytic gradient,
    // every coordinate, ≥10 random small models at 64-bit precision.
    let unc = CriterionId::undefined();
    let mut checked_models = 0;
    for seed in 0..10u64 {
        let layers = 1 + (seed % 2) as usize;
        let hidden = if seed % 3 == 0 { 16 } else { 8 };
        let mut rng = seeded_rng(seed, "gradcheck-data");
        let sentences: Vec<SegmentedSentence> = (0..2)
            .map(|_| {
                let chars = gen_text(&mut rng);
                let lengths = runs_lengths(&chars);
                SegmentedSentence::new(chars, lengths, unc.clone()).unwrap()
            })
            .collect();
        let vocab = Vocab::build(&sentences);
        let config = ModelConfig::for_vocab(&vocab, MAX_LEN, layers, 2, hidden).unwrap();
        let params = ModelParams::<f64>::init(config.clone(), seed);
        let batch: Vec<_> = sentences
            .iter()
            .map(|s| {
                let (input, kept) = augment(s, &vocab, None, MAX_LEN).unwrap();
                (input, encode_tags(kept.word_lengths()))
            })
            .collect();

        let (_, grads) = loss_and_grad(&params, &batch, LossReduction::Mean, None).unwrap();
        let h = 1e-5;
        let mut probe = params.clone();
        for i in 0..config.param_count() {
            let orig = probe.values()[i];
            probe.values_mut()[i] = orig + h;
            let (lp, _) = loss_and_grad(&probe, &batch, LossReduction::Mean, None).unwrap();
            probe.values_mut()[i] = orig - h;
            let (lm, _) = loss_and_grad(&probe, &batch, LossReduction::Mean, None).unwrap();
            probe.values_mut()[i] = orig;
            let numeric = (lp - lm) / (2.0 * h);
            let analytic = grads.values()[i];
            let denom = analytic.abs().max(numeric.abs()).max(1e-3);
            assert!(
                (analytic - numeric).abs() / denom < 1e-4,
                "model {seed} coord {i}: analytic {analytic} vs numeric {numeric}"
            );
        }
        checked_models += 1;
    }
    assert_eq!(checked_models, 10);
    println!("acceptance 02 gradient-correctness: PASS");
}

#[test]
fn acceptance_03_meta_optimizer_analytic() {
    let quadratic = |theta: &Vec<f64>, c: &Vec<f64>| -> Result<(f64, Vec<f64>)> {
        let loss = theta
            .iter()
            .zip(c)
            .map(|(&t, &c)| 0.5 * (t - c) * (t - c))
            .sum();
        Ok((loss, theta.iter().zip(c).map(|(&t, &c)| t - c).collect()))
    };
    let plain = |alpha: f64, beta: f64, k: usize| MetaConfig {
        alpha,
        beta,
        k,
        base: BaseKind::Plain,
        weight_decay: 0.0,
        schedule: None,
    };

    // (a) k=0 trajectory equals the plain optimizer exactly over 100 steps.
    let start = vec![3.0, -1.5, 0.75, 10.0];
    let target = vec![1.0, 0.0, -1.0, 2.0];
    let mut opt = MetaOptimizer::new(start.clone(), plain(0.2, 0.05, 0)).unwrap();
    let mut manual = start;
    for _ in 0..100 {
        opt.meta_step(&[], &target, quadratic).unwrap();
        let (_, g) = quadratic(&manual, &target).unwrap();
        for (p, g) in manual.iter_mut().zip(&g) {
            *p -= 0.05 * g;
        }
    }
    assert_eq!(opt.theta0(), &manual, "(a) k=0 equivalence");

    // (b) quadratic k=1 closed form θ₀ − β(1−α)(θ₀−c) to 1e−12.
    let theta = vec![2.0, -3.0, 0.125, 8.5];
    let c = vec![0.5, 1.5, -0.25, 0.0];
    let (alpha, beta) = (0.25, 0.125);
    let mut opt = MetaOptimizer::new(theta.clone(), plain(alpha, beta, 1)).unwrap();
    opt.meta_step(std::slice::from_ref(&c), &c, quadratic).unwrap();
    for i in 0..theta.len() {
        let expect = theta[i] - beta * (1.0 - alpha) * (theta[i] - c[i]);
        assert!(
            (opt.theta0()[i] - expect).abs() < 1e-12,
            "(b) closed form at coordinate {i}"
        );
    }

    // (c) gradient-evaluation count is exactly (k+1) × steps.
    for k in [0usize, 1, 3] {
        let mut evals = 0u64;
        let mut opt = MetaOptimizer::new(vec![1.0, 2.0], plain(0.1, 0.1, k)).unwrap();
        let batches = vec![vec![0.0, 0.0]; k];
        for _ in 0..25 {
            opt.meta_step(&batches, &vec![0.0, 0.0], |t, b| {
                evals += 1;
                quadratic(t, b)
            })
            .unwrap();
        }
        assert_eq!(evals, (k as u64 + 1) * 25, "(c) counted evaluations, k={k}");
        assert_eq!(opt.grad_evals(), evals, "(c) internal counter, k={k}");
    }
    println!("acceptance 03 meta-optimizer-analytic: PASS");
}

#[test]
fn acceptance_04_criterion_conditioning() {
    let ckpt = pretrained_k1();
    let dev_a = dataset("runa", runs_lengths, 60, "a-dev");
    let dev_b = dataset("sing", singles_lengths, 60, "b-dev");

    // Each criterion queried with its own token segments its dev set.
    let f1_a = model_f1(&ckpt.params, &ckpt.vocab, &dev_a, None);
    let f1_b = model_f1(&ckpt.params, &ckpt.vocab, &dev_b, None);
    assert!(f1_a >= 0.95, "runa dev F1 {f1_a:.4} < 0.95");
    assert!(f1_b >= 0.95, "sing dev F1 {f1_b:.4} < 0.95");

    // The two criterion tokens segment shared inputs differently.
    let mut rng = seeded_rng(99, "shared-inputs");
    let mut differing = 0;
    let mut total = 0;
    for _ in 0..20 {
        let chars = gen_text(&mut rng);
        if runs_lengths(&chars) == singles_lengths(&chars) {
            continue; // all runs are singletons; the criteria genuinely agree
        }
        total += 1;
        let with = |criterion: &CriterionId| {
            mcseg_core::train::predict_word_lengths(
                &ckpt.params,
                &ckpt.vocab,
                &chars,
                criterion,
                MAX_LEN,
            )
            .unwrap()
        };
        if with(&crit("runa")) != with(&crit("sing")) {
            differing += 1;
        }
    }
    assert!(total > 0);
    assert!(
        differing * 2 > total,
        "criterion tokens changed only {differing}/{total} shared segmentations"
    );
    println!(
        "acceptance 04 criterion-conditioning: PASS (runa {f1_a:.4}, sing {f1_b:.4}, {differing}/{total} shared inputs differ)"
    );
}

#[test]
fn acceptance_05_pretraining_transfer() {
    let unc = CriterionId::undefined();
    let train = downstream_train();
    let dev = downstream_dev();
    let mut wins = 0;
    let mut detail = Vec::new();
    for seed in [101u64, 102, 103] {
        let config = finetune_config(4, 16, seed);
        let mut run = |init: &FinetuneInit<f32>| {
            let mut reached: Option<u64> = None;
            let outcome = finetune_observed(init, train, &unc, &config, |step, params, vocab| {
                if reached.is_none() && model_f1(params, vocab, dev, Some(&unc)) >= 0.90 {
                    reached = Some(step);
                }
            })
            .unwrap();
            let f1 = model_f1(&outcome.checkpoint.params, &outcome.checkpoint.vocab, dev, Some(&unc));
            (reached, f1)
        };
        let (pre_steps, pre_f1) = run(&FinetuneInit::From(pretrained_k1().clone()));
        let (fresh_steps, fresh_f1) = run(&FinetuneInit::Fresh);
        let faster = match (pre_steps, fresh_steps) {
            (Some(p), Some(f)) => p < f,
            (Some(_), None) => true,
            _ => false,
        };
        let seed_ok = faster && pre_f1 >= fresh_f1;
        detail.push(format!(
            "seed {seed}: pretrained {:?} steps → {pre_f1:.4}, fresh {:?} steps → {fresh_f1:.4}",
            pre_steps, fresh_steps
        ));
        if seed_ok {
            wins += 1;
        }
    }
    assert!(wins >= 2, "transfer direction held in {wins}/3 seeds\n{}", detail.join("\n"));
    println!("acceptance 05 pretraining-transfer: PASS ({wins}/3 seeds)\n  {}", detail.join("\n  "));
}

#[test]
fn acceptance_06_meta_learning_ablation() {
    let unc = CriterionId::undefined();
    // Low-resource downstream arm so pre-training quality matters.
    let small = sample_low_resource(downstream_train(), 0.25, 17).unwrap();
    let dev = downstream_dev();
    let mut wins = 0;
    let mut detail = Vec::new();
    for seed in [201u64, 202, 203] {
        let config = finetune_config(3, 16, seed);
        let f1_of = |ckpt: &Checkpoint<f32>| {
            let outcome = finetune(&FinetuneInit::From(ckpt.clone()), &small, &unc, &config).unwrap();
            model_f1(&outcome.checkpoint.params, &outcome.checkpoint.vocab, dev, Some(&unc))
        };
        let k1 = f1_of(pretrained_k1());
        let k0 = f1_of(pretrained_k0());
        detail.push(format!("seed {seed}: k=1 {k1:.4} vs k=0 {k0:.4}"));
        if k1 >= k0 {
            wins += 1;
        }
    }
    assert!(
        wins >= 2,
        "k=1 non-inferiority held in {wins}/3 seeds\n{}",
        detail.join("\n")
    );
    println!("acceptance 06 meta-learning-ablation: PASS ({wins}/3 seeds)\n  {}", detail.join("\n  "));
}

#[test]
fn acceptance_07_low_resource_trend() {
    let unc = CriterionId::undefined();
    let train = downstream_train();
    let dev = downstream_dev();
    let mut wins = 0;
    let mut detail = Vec::new();
    for seed in [301u64, 302, 303] {
        let config = finetune_config(5, 16, seed);
        let variants = [
            ("fresh".to_string(), FinetuneInit::<f32>::Fresh),
            (
                "pretrained".to_string(),
                FinetuneInit::From(pretrained_k1().clone()),
            ),
        ];
        let rows = low_resource_sweep(&[0.01, 1.0], train, dev, &variants, &unc, &config).unwrap();
        let f1 = |rate: f64, variant: &str| {
            rows.iter()
                .find(|r| r.rate == rate && r.variant == variant)
                .unwrap()
                .f1
        };
        let gap_low = f1(0.01, "pretrained") - f1(0.01, "fresh");
        let gap_full = f1(1.0, "pretrained") - f1(1.0, "fresh");
        detail.push(format!(
            "seed {seed}: gap@1% {gap_low:+.4}, gap@100% {gap_full:+.4}"
        ));
        if gap_low > gap_full {
            wins += 1;
        }
    }
    assert!(
        wins >= 2,
        "widening-gap direction held in {wins}/3 seeds\n{}",
        detail.join("\n")
    );
    println!("acceptance 07 low-resource-trend: PASS ({wins}/3 seeds)\n  {}", detail.join("\n  "));
}

#[test]
fn acceptance_08_scoring_oracle() {
    // Brute-force span-set intersection oracle on 1,000 random pairs.
    let mut rng = seeded_rng(8, "scoring");
    let random_lengths = |rng: &mut ChaCha8Rng, total: usize| -> Vec<usize> {
        let mut lengths = Vec::new();
        let mut left = total;
        while left > 0 {
            let l = rng.random_range(1..=left.min(4));
            lengths.push(l);
            left -= l;
        }
        lengths
    };
    let unc = CriterionId::undefined();
    for _ in 0..1000 {
        let n = rng.random_range(4..24);
        let chars = vec!['字'; n];
        let gold = SegmentedSentence::new(chars.clone(), random_lengths(&mut rng, n), unc.clone())
            .unwrap();
        let pred =
            SegmentedSentence::new(chars, random_lengths(&mut rng, n), unc.clone()).unwrap();

        let gold_spans: HashSet<(usize, usize)> = gold.spans().into_iter().collect();
        let pred_spans: HashSet<(usize, usize)> = pred.spans().into_iter().collect();
        let correct = gold_spans.intersection(&pred_spans).count();

        let report = score(
            std::slice::from_ref(&gold),
            std::slice::from_ref(&pred),
            &HashSet::new(),
        )
        .unwrap();
        assert_eq!(report.gold_words, gold_spans.len());
        assert_eq!(report.predicted_words, pred_spans.len());
        assert_eq!(report.correct_words, correct);
    }

    // Worked fixture: P = 2/4, R = 2/3, F1 = 4/7.
    let gold = vec![SegmentedSentence::from_words(&["李娜", "进入", "半决赛"], unc.clone()).unwrap()];
    let pred =
        vec![SegmentedSentence::from_words(&["李", "娜", "进入", "半决赛"], unc).unwrap()];
    let report = score(&gold, &pred, &HashSet::new()).unwrap();
    assert!((report.precision - 0.5).abs() < 1e-12);
    assert!((report.recall - 2.0 / 3.0).abs() < 1e-12);
    assert!((report.f1 - 4.0 / 7.0).abs() < 1e-12);
    println!("acceptance 08 scoring-oracle: PASS");
}

#[test]
fn acceptance_09_determinism() {
    // Plain-base mode: byte-identical checkpoints and metric logs.
    let a = dataset("runa", runs_lengths, 80, "det-a");
    let b = dataset("sing", singles_lengths, 80, "det-b");
    let joint = build_joint_corpus(&[a, b], 0.1, 3).unwrap();
    let mut config = pretrain_config(1, 40, 9);
    config.base_optimizer = BaseKind::Plain;
    config.hidden = 32;
    config.layers = 1;

    let run = || pretrain::<f32>(&joint, &config).unwrap();
    let (x, y) = (run(), run());
    assert_eq!(x.checkpoint.to_bytes(), y.checkpoint.to_bytes());
    assert_eq!(x.metrics, y.metrics);
    assert_eq!(x.grad_evals, 2 * 40);

    let mut ft = config.clone();
    ft.mode = TrainMode::Finetune;
    ft.epochs = 2;
    let unc = CriterionId::undefined();
    let ft_run = || {
        finetune(
            &FinetuneInit::From(x.checkpoint.clone()),
            downstream_train(),
            &unc,
            &ft,
        )
        .unwrap()
    };
    let (p, q) = (ft_run(), ft_run());
    assert_eq!(p.checkpoint.to_bytes(), q.checkpoint.to_bytes());
    assert_eq!(p.metrics, q.metrics);
    println!("acceptance 09 determinism: PASS");
}

#[test]
fn acceptance_10_low_resource_instance_counts() {
    let unc = CriterionId::undefined();
    let train: Vec<SegmentedSentence> = (0..813)
        .map(|i| {
            SegmentedSentence::from_words(&[format!("w{i}")], unc.clone()).unwrap()
        })
        .collect();
    for (rate, expect) in [
        (0.01, 8usize),
        (0.05, 40),
        (0.10, 81),
        (0.20, 162),
        (0.50, 406),
        (0.80, 650),
        (1.00, 813),
    ] {
        let got = sample_low_resource(&train, rate, 5).unwrap().len();
        assert_eq!(got, expect, "rate {rate}");
    }
    println!("acceptance 10 low-resource-instance-counts: PASS");
}
