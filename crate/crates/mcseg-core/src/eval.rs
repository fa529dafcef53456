//! Word-level scoring: precision/recall/F1, OOV recall, low-resource sweep.
//!
//! Words are compared as character-offset spans, so repeated words count per
//! occurrence. An out-of-vocabulary gold word is one whose string is absent
//! from the fine-tuning training vocabulary; OOV recall is recall restricted
//! to those words and reported as `n/a` when no gold word is OOV.

use std::collections::HashSet;

use crate::corpus::{CriterionId, SegmentedSentence};
use crate::error::{Error, Result};
use crate::labeler::ModelParams;
use crate::real::Real;
use crate::train::{finetune, predict_word_lengths, FinetuneInit, TrainConfig};
use crate::Vocab;

/// Scoring outcome with the underlying counts.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// `None` when the gold side has no OOV words.
    pub oov_recall: Option<f64>,
    pub gold_words: usize,
    pub predicted_words: usize,
    pub correct_words: usize,
    pub oov_gold_words: usize,
    pub oov_correct_words: usize,
}

impl EvalReport {
    fn from_counts(
        gold_words: usize,
        predicted_words: usize,
        correct_words: usize,
        oov_gold_words: usize,
        oov_correct_words: usize,
    ) -> Self {
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let precision = ratio(correct_words, predicted_words);
        let recall = ratio(correct_words, gold_words);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        let oov_recall = if oov_gold_words == 0 {
            None
        } else {
            Some(oov_correct_words as f64 / oov_gold_words as f64)
        };
        Self {
            precision,
            recall,
            f1,
            oov_recall,
            gold_words,
            predicted_words,
            correct_words,
            oov_gold_words,
            oov_correct_words,
        }
    }

    pub const TSV_HEADER: &'static str =
        "precision\trecall\tf1\toov_recall\tgold_words\tpred_words\tcorrect_words\toov_gold\toov_correct";

    pub fn tsv_row(&self) -> String {
        let oov = self
            .oov_recall
            .map_or("n/a".to_string(), |r| format!("{r:.4}"));
        format!(
            "{:.4}\t{:.4}\t{:.4}\t{}\t{}\t{}\t{}\t{}\t{}",
            self.precision,
            self.recall,
            self.f1,
            oov,
            self.gold_words,
            self.predicted_words,
            self.correct_words,
            self.oov_gold_words,
            self.oov_correct_words
        )
    }

    /// Human-readable aligned table.
    pub fn render(&self) -> String {
        let oov = self
            .oov_recall
            .map_or("n/a".to_string(), |r| format!("{r:.4}"));
        format!(
            "precision {:.4}\nrecall    {:.4}\nF1        {:.4}\nOOV-R     {}\nwords     gold={} pred={} correct={} oov_gold={} oov_correct={}\n",
            self.precision,
            self.recall,
            self.f1,
            oov,
            self.gold_words,
            self.predicted_words,
            self.correct_words,
            self.oov_gold_words,
            self.oov_correct_words
        )
    }
}

/// Word-type set of a corpus (for OOV bookkeeping).
pub fn word_types(sentences: &[SegmentedSentence]) -> HashSet<String> {
    sentences.iter().flat_map(|s| s.words()).collect()
}

/// Scores predicted segmentations against gold, word-span by word-span.
///
/// Both sides must carry identical character streams sentence-by-sentence.
pub fn score(
    gold: &[SegmentedSentence],
    pred: &[SegmentedSentence],
    train_vocab: &HashSet<String>,
) -> Result<EvalReport> {
    if gold.len() != pred.len() {
        return Err(Error::StreamMismatch { index: gold.len().min(pred.len()) });
    }
    let mut gold_words = 0;
    let mut predicted_words = 0;
    let mut correct_words = 0;
    let mut oov_gold_words = 0;
    let mut oov_correct_words = 0;
    for (index, (g, p)) in gold.iter().zip(pred).enumerate() {
        if g.chars() != p.chars() {
            return Err(Error::StreamMismatch { index });
        }
        let gold_spans = g.spans();
        let pred_spans: HashSet<(usize, usize)> = p.spans().into_iter().collect();
        gold_words += gold_spans.len();
        predicted_words += pred_spans.len();
        for &(start, end) in &gold_spans {
            let hit = pred_spans.contains(&(start, end));
            if hit {
                correct_words += 1;
            }
            let word: String = g.chars()[start..end].iter().collect();
            if !train_vocab.contains(&word) {
                oov_gold_words += 1;
                if hit {
                    oov_correct_words += 1;
                }
            }
        }
    }
    Ok(EvalReport::from_counts(
        gold_words,
        predicted_words,
        correct_words,
        oov_gold_words,
        oov_correct_words,
    ))
}

/// Fraction of test word tokens whose string is absent from the training
/// word-type set.
pub fn oov_rate(train_types: &HashSet<String>, test_tokens: &[String]) -> Result<f64> {
    if test_tokens.is_empty() {
        return Err(Error::EmptyCorpus("OOV rate over an empty test set"));
    }
    let oov = test_tokens
        .iter()
        .filter(|w| !train_types.contains(*w))
        .count();
    Ok(oov as f64 / test_tokens.len() as f64)
}

/// Unweighted mean F1 across datasets (the "Avg." column).
pub fn average_f1(reports: &[EvalReport]) -> f64 {
    if reports.is_empty() {
        return 0.0;
    }
    reports.iter().map(|r| r.f1).sum::<f64>() / reports.len() as f64
}

/// Predicts segmentations for `data` and scores them against the gold side.
pub fn evaluate_model<F: Real>(
    params: &ModelParams<F>,
    vocab: &Vocab,
    data: &[SegmentedSentence],
    criterion_override: Option<&CriterionId>,
    max_len: usize,
    train_vocab: &HashSet<String>,
) -> Result<EvalReport> {
    let mut pred = Vec::with_capacity(data.len());
    for s in data {
        let criterion = criterion_override.unwrap_or(s.criterion());
        let lengths = predict_word_lengths(params, vocab, s.chars(), criterion, max_len)?;
        pred.push(SegmentedSentence::new(
            s.chars().to_vec(),
            lengths,
            s.criterion().clone(),
        )?);
    }
    score(data, &pred, train_vocab)
}

/// One sweep outcome: `(rate, variant, F1)`.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub rate: f64,
    pub variant: String,
    pub f1: f64,
    pub instances: usize,
}

/// Low-resource harness: for every `(rate, variant)` pair, sample the
/// training set, fine-tune from the variant's initialization and score on
/// the fixed test set. The sample at a given rate is shared across variants
/// (paired comparison).
pub fn low_resource_sweep<F: Real>(
    rates: &[f64],
    base_train: &[SegmentedSentence],
    test: &[SegmentedSentence],
    init_variants: &[(String, FinetuneInit<F>)],
    criterion_override: &CriterionId,
    config: &TrainConfig,
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::with_capacity(rates.len() * init_variants.len());
    for &rate in rates {
        let sampled = crate::corpus::sample_low_resource(base_train, rate, config.seed)?;
        let sample_vocab = word_types(&sampled);
        for (name, init) in init_variants {
            let outcome = finetune(init, &sampled, criterion_override, config)?;
            let report = evaluate_model(
                &outcome.checkpoint.params,
                &outcome.checkpoint.vocab,
                test,
                Some(criterion_override),
                config.max_len,
                &sample_vocab,
            )?;
            rows.push(SweepRow {
                rate,
                variant: name.clone(),
                f1: report.f1,
                instances: sampled.len(),
            });
        }
    }
    Ok(rows)
}

/// Sweep rows as a TSV table with a fixed header.
pub fn sweep_tsv(rows: &[SweepRow]) -> String {
    let mut out = String::from("rate\tinstances\tvariant\tf1\n");
    for row in rows {
        out.push_str(&format!(
            "{}\t{}\t{}\t{:.4}\n",
            row.rate, row.instances, row.variant, row.f1
        ));
    }
    out
}
