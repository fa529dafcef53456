//! Unified criterion-conditioned sequence labeler.
//!
//! One shared encoder serves every segmentation criterion: the input is the
//! sentence characters framed as `[CLS] [criterion] c1 .. cn [SEP]`, a small
//! self-attention encoder produces per-position hidden states, and a shared
//! linear classifier with softmax yields a distribution over `{B,M,E,S}` at
//! every position. Loss and predictions are restricted to text positions.

mod encoder;
mod params;

pub use encoder::{loss_and_grad, predict, Dropout, ForwardTrace, LossReduction};
pub use params::ModelParams;

use crate::corpus::{CriterionId, SegmentedSentence, Vocab};
use crate::error::{Error, Result};

/// Token id of the sequence-start marker.
pub const CLS_ID: usize = 0;
/// Token id of the sequence-end marker.
pub const SEP_ID: usize = 1;
/// Positions occupied by `[CLS]`, the criterion token and `[SEP]`.
pub const SPECIAL_POSITIONS: usize = 3;

/// Architecture hyper-parameters. The parameter layout is a pure function
/// of these five values; the feed-forward width is fixed at `4 * hidden`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub max_len: usize,
    pub layers: usize,
    pub heads: usize,
    pub hidden: usize,
}

impl ModelConfig {
    pub fn new(
        vocab_size: usize,
        max_len: usize,
        layers: usize,
        heads: usize,
        hidden: usize,
    ) -> Result<Self> {
        if hidden == 0 || heads == 0 || hidden % heads != 0 {
            return Err(Error::Config(format!(
                "hidden size {hidden} must be a positive multiple of {heads} heads"
            )));
        }
        if max_len <= SPECIAL_POSITIONS {
            return Err(Error::Config(format!(
                "max_len {max_len} leaves no room for text characters"
            )));
        }
        Ok(Self {
            vocab_size,
            max_len,
            layers,
            heads,
            hidden,
        })
    }

    /// Architecture for the given vocabulary.
    pub fn for_vocab(
        vocab: &Vocab,
        max_len: usize,
        layers: usize,
        heads: usize,
        hidden: usize,
    ) -> Result<Self> {
        Self::new(token_vocab_size(vocab), max_len, layers, heads, hidden)
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    pub fn ff_dim(&self) -> usize {
        4 * self.hidden
    }

    /// Longest character sequence that fits after the special tokens.
    pub fn text_capacity(&self) -> usize {
        self.max_len - SPECIAL_POSITIONS
    }
}

/// Total token-id space: `[CLS]`, `[SEP]`, criterion tokens, characters.
pub fn token_vocab_size(vocab: &Vocab) -> usize {
    2 + vocab.criterion_count() + vocab.char_count()
}

/// Token id of a criterion, when it is part of the vocabulary.
pub fn criterion_token_id(vocab: &Vocab, criterion: &CriterionId) -> Option<usize> {
    vocab.criterion_index(criterion).map(|i| 2 + i)
}

/// Token id of a character; unseen characters map to the unknown id.
pub fn char_token_id(vocab: &Vocab, c: char) -> usize {
    2 + vocab.criterion_count() + vocab.char_index(c)
}

/// Model input: `[CLS] [criterion] text… [SEP]` as token ids plus the mask
/// selecting the text positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AugmentedInput {
    pub token_ids: Vec<usize>,
    pub text_mask: Vec<bool>,
    pub criterion: CriterionId,
}

impl AugmentedInput {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    pub fn text_len(&self) -> usize {
        self.text_mask.iter().filter(|&&m| m).count()
    }
}

/// Frames a sentence for the model, truncating it to the configured window.
///
/// The criterion token is the sentence's own unless `override_criterion` is
/// given (downstream and zero-shot inference use `unc`). Returns the input
/// together with the possibly-truncated sentence whose word structure stays
/// aligned with the text positions.
pub fn augment(
    sentence: &SegmentedSentence,
    vocab: &Vocab,
    override_criterion: Option<&CriterionId>,
    max_len: usize,
) -> Result<(AugmentedInput, SegmentedSentence)> {
    if max_len <= SPECIAL_POSITIONS {
        return Err(Error::EmptyAfterTruncation { max_len });
    }
    let criterion = override_criterion.unwrap_or(sentence.criterion()).clone();
    let crit_id = criterion_token_id(vocab, &criterion)
        .ok_or_else(|| Error::UnknownCriterion(criterion.name().to_string()))?;
    let kept = sentence.truncated(max_len - SPECIAL_POSITIONS)?;

    let mut token_ids = Vec::with_capacity(kept.len() + SPECIAL_POSITIONS);
    let mut text_mask = Vec::with_capacity(kept.len() + SPECIAL_POSITIONS);
    token_ids.push(CLS_ID);
    text_mask.push(false);
    token_ids.push(crit_id);
    text_mask.push(false);
    for &c in kept.chars() {
        token_ids.push(char_token_id(vocab, c));
        text_mask.push(true);
    }
    token_ids.push(SEP_ID);
    text_mask.push(false);

    Ok((
        AugmentedInput {
            token_ids,
            text_mask,
            criterion,
        },
        kept,
    ))
}
