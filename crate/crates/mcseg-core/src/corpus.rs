//! Corpus normalization, splitting and the joint multi-criteria pool.
//!
//! Raw segmented corpora are cleaned in four steps (simplification,
//! full-width folding, alphanumeric-run replacement, clause splitting),
//! optionally split into train/dev, and merged into one joint corpus where a
//! fraction of sentences is relabeled with the undefined criterion `unc`.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::{fnv1a64, seeded_rng};

/// Placeholder character substituted for a maximal run of ASCII letters.
pub const LETTER_RUN: char = '\u{E000}';
/// Placeholder character substituted for a maximal run of ASCII digits.
pub const DIGIT_RUN: char = '\u{E001}';

/// Name of the undefined criterion.
pub const UNC: &str = "unc";

/// Default clause-terminator set: CJK sentence punctuation plus the
/// half-width equivalents produced by full-width folding.
pub const DEFAULT_CLAUSE_PUNCT: &[char] = &[
    '。', '！', '？', '；', '，', '、', '：', '.', '!', '?', ';', ',', ':',
];

/// Identifier of one segmentation convention, e.g. `pku`.
///
/// The reserved name `unc` denotes the undefined criterion used for
/// criterion-independent knowledge and for downstream corpora.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CriterionId(String);

impl CriterionId {
    /// Validates and wraps a criterion name (short lowercase ASCII).
    pub fn new(name: &str) -> Result<Self> {
        let ok = !name.is_empty()
            && name.len() <= 16
            && name
                .bytes()
                .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_');
        if ok {
            Ok(Self(name.to_string()))
        } else {
            Err(Error::CriterionName(name.to_string()))
        }
    }

    /// The undefined criterion `unc`.
    pub fn undefined() -> Self {
        Self(UNC.to_string())
    }

    pub fn name(&self) -> &str {
        &self.0
    }

    pub fn is_undefined(&self) -> bool {
        self.0 == UNC
    }
}

impl std::fmt::Display for CriterionId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

/// One clause with its gold word-boundary structure and criterion.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentedSentence {
    chars: Vec<char>,
    word_lengths: Vec<usize>,
    criterion: CriterionId,
}

impl SegmentedSentence {
    /// Builds a sentence, checking that the word lengths tile the characters.
    pub fn new(chars: Vec<char>, word_lengths: Vec<usize>, criterion: CriterionId) -> Result<Self> {
        if chars.is_empty() {
            return Err(Error::InvalidSegmentation("empty sentence".into()));
        }
        if word_lengths.iter().any(|&l| l == 0) {
            return Err(Error::InvalidSegmentation("zero-length word".into()));
        }
        let total: usize = word_lengths.iter().sum();
        if total != chars.len() {
            return Err(Error::InvalidSegmentation(format!(
                "word lengths sum to {total} but sentence has {} characters",
                chars.len()
            )));
        }
        Ok(Self {
            chars,
            word_lengths,
            criterion,
        })
    }

    /// Builds a sentence from whole words.
    pub fn from_words<S: AsRef<str>>(words: &[S], criterion: CriterionId) -> Result<Self> {
        let mut chars = Vec::new();
        let mut word_lengths = Vec::with_capacity(words.len());
        for w in words {
            let n = w.as_ref().chars().count();
            chars.extend(w.as_ref().chars());
            word_lengths.push(n);
        }
        Self::new(chars, word_lengths, criterion)
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    pub fn word_lengths(&self) -> &[usize] {
        &self.word_lengths
    }

    pub fn criterion(&self) -> &CriterionId {
        &self.criterion
    }

    pub fn len(&self) -> usize {
        self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }

    /// Words as owned strings, in order.
    pub fn words(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.word_lengths.len());
        let mut pos = 0;
        for &l in &self.word_lengths {
            out.push(self.chars[pos..pos + l].iter().collect());
            pos += l;
        }
        out
    }

    /// Word spans as `(start, end)` character offsets.
    pub fn spans(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.word_lengths.len());
        let mut pos = 0;
        for &l in &self.word_lengths {
            out.push((pos, pos + l));
            pos += l;
        }
        out
    }

    /// Same sentence under a different criterion.
    pub fn with_criterion(&self, criterion: CriterionId) -> Self {
        Self {
            chars: self.chars.clone(),
            word_lengths: self.word_lengths.clone(),
            criterion,
        }
    }

    /// First `max_chars` characters with the word structure cut to match.
    /// The word containing the cut is shortened; trailing words are dropped.
    pub fn truncated(&self, max_chars: usize) -> Result<Self> {
        if max_chars == 0 {
            return Err(Error::EmptyAfterTruncation { max_len: 0 });
        }
        if self.chars.len() <= max_chars {
            return Ok(self.clone());
        }
        let mut lengths = Vec::new();
        let mut used = 0;
        for &l in &self.word_lengths {
            if used + l <= max_chars {
                lengths.push(l);
                used += l;
            } else {
                let keep = max_chars - used;
                if keep > 0 {
                    lengths.push(keep);
                }
                break;
            }
            if used == max_chars {
                break;
            }
        }
        Self::new(
            self.chars[..max_chars].to_vec(),
            lengths,
            self.criterion.clone(),
        )
    }
}

/// Train/dev/test partition of one corpus.
#[derive(Debug, Clone)]
pub struct CorpusSplit {
    pub train: Vec<SegmentedSentence>,
    pub dev: Vec<SegmentedSentence>,
    pub test: Vec<SegmentedSentence>,
    pub seed: u64,
}

/// Character and criterion vocabularies shared by corpus and model.
///
/// Character indices reserve slot 0 for the unknown character and slots
/// 1 and 2 for the letter-run and digit-run placeholders; the remaining
/// characters follow in code-point order. Criterion indices follow name
/// order with `unc` always present.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    char_ids: BTreeMap<char, usize>,
    criteria: Vec<CriterionId>,
    criterion_ids: HashMap<String, usize>,
}

/// Char-vocabulary index reserved for unseen characters.
pub const UNK_CHAR_INDEX: usize = 0;

impl Vocab {
    /// Builds the vocabulary from every character and criterion in `sentences`.
    pub fn build(sentences: &[SegmentedSentence]) -> Self {
        Self::build_with_criteria(sentences, &[])
    }

    /// Like [`Vocab::build`] with additional criteria reserved up front
    /// (e.g. a fine-tuning override absent from the sentences themselves).
    pub fn build_with_criteria(sentences: &[SegmentedSentence], extra: &[CriterionId]) -> Self {
        let mut chars = BTreeSet::new();
        let mut crits: BTreeSet<CriterionId> = extra.iter().cloned().collect();
        for s in sentences {
            chars.extend(s.chars().iter().copied());
            crits.insert(s.criterion().clone());
        }
        crits.insert(CriterionId::undefined());
        chars.remove(&LETTER_RUN);
        chars.remove(&DIGIT_RUN);

        let mut char_ids = BTreeMap::new();
        char_ids.insert(LETTER_RUN, 1);
        char_ids.insert(DIGIT_RUN, 2);
        for (i, c) in chars.into_iter().enumerate() {
            char_ids.insert(c, i + 3);
        }
        let criteria: Vec<CriterionId> = crits.into_iter().collect();
        let criterion_ids = criteria
            .iter()
            .enumerate()
            .map(|(i, c)| (c.name().to_string(), i))
            .collect();
        Self {
            char_ids,
            criteria,
            criterion_ids,
        }
    }

    /// Index of `c`, or the reserved unknown index.
    pub fn char_index(&self, c: char) -> usize {
        self.char_ids.get(&c).copied().unwrap_or(UNK_CHAR_INDEX)
    }

    pub fn criterion_index(&self, id: &CriterionId) -> Option<usize> {
        self.criterion_ids.get(id.name()).copied()
    }

    pub fn criteria(&self) -> &[CriterionId] {
        &self.criteria
    }

    /// Number of character slots including the three reserved ones.
    pub fn char_count(&self) -> usize {
        self.char_ids.len() + 1
    }

    pub fn criterion_count(&self) -> usize {
        self.criteria.len()
    }

    /// Characters with explicit indices, in index order (placeholders first).
    pub fn chars_in_order(&self) -> Vec<char> {
        let mut pairs: Vec<(usize, char)> =
            self.char_ids.iter().map(|(&c, &i)| (i, c)).collect();
        pairs.sort_unstable();
        pairs.into_iter().map(|(_, c)| c).collect()
    }

    /// Rebuilds a vocabulary from the serialized orderings.
    pub fn from_parts(chars: Vec<char>, criteria: Vec<CriterionId>) -> Result<Self> {
        if chars.len() < 2 || chars[0] != LETTER_RUN || chars[1] != DIGIT_RUN {
            return Err(Error::CheckpointMismatch(
                "vocabulary does not start with the reserved placeholders".into(),
            ));
        }
        let mut char_ids = BTreeMap::new();
        for (i, c) in chars.into_iter().enumerate() {
            char_ids.insert(c, i + 1);
        }
        let criterion_ids = criteria
            .iter()
            .enumerate()
            .map(|(i, c)| (c.name().to_string(), i))
            .collect();
        Ok(Self {
            char_ids,
            criteria,
            criterion_ids,
        })
    }

    /// Order-independent fingerprint used to detect checkpoint/corpus drift.
    pub fn hash(&self) -> u64 {
        let mut bytes = Vec::new();
        for c in self.chars_in_order() {
            bytes.extend_from_slice(&(c as u32).to_le_bytes());
        }
        bytes.push(0xff);
        for c in &self.criteria {
            bytes.extend_from_slice(c.name().as_bytes());
            bytes.push(0);
        }
        fnv1a64(&bytes)
    }
}

/// Merged multi-criterion training pool.
#[derive(Debug, Clone)]
pub struct JointCorpus {
    pub sentences: Vec<SegmentedSentence>,
    pub vocab: Vocab,
    pub unc_fraction: f64,
    pub seed: u64,
}

/// Folds full-width ASCII (U+FF01..=U+FF5E) to half-width and the
/// ideographic space to an ASCII space. Length-preserving and idempotent.
pub fn normalize_fullwidth(text: &[char]) -> Vec<char> {
    text.iter()
        .map(|&c| match c as u32 {
            0xFF01..=0xFF5E => char::from_u32(c as u32 - 0xFEE0).unwrap(),
            0x3000 => ' ',
            _ => c,
        })
        .collect()
}

/// Replaces each maximal ASCII-letter run with [`LETTER_RUN`] and each
/// maximal digit run with [`DIGIT_RUN`]. Operates on the characters of a
/// single word; mixed runs alternate at letter/digit boundaries.
pub fn replace_alnum_runs(text: &[char]) -> Vec<char> {
    #[derive(PartialEq, Clone, Copy)]
    enum Class {
        Letter,
        Digit,
        Other,
    }
    let class = |c: char| {
        if c.is_ascii_alphabetic() {
            Class::Letter
        } else if c.is_ascii_digit() {
            Class::Digit
        } else {
            Class::Other
        }
    };
    let mut out = Vec::with_capacity(text.len());
    let mut prev = Class::Other;
    for &c in text {
        let cur = class(c);
        match cur {
            Class::Letter if prev != Class::Letter => out.push(LETTER_RUN),
            Class::Digit if prev != Class::Digit => out.push(DIGIT_RUN),
            Class::Other => out.push(c),
            _ => {}
        }
        prev = cur;
    }
    out
}

/// Character substitution table for traditional→simplified conversion.
#[derive(Debug, Clone, Default)]
pub struct CharMapping {
    table: HashMap<char, char>,
}

impl CharMapping {
    /// The empty (identity) mapping.
    pub fn identity() -> Self {
        Self::default()
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (char, char)>) -> Self {
        Self {
            table: pairs.into_iter().collect(),
        }
    }

    /// Parses `src<TAB>dst` lines; each side must be exactly one character.
    pub fn parse(path: &std::path::Path, content: &str) -> Result<Self> {
        let mut table = HashMap::new();
        for (i, line) in content.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let bad = || Error::MappingLine {
                path: path.to_path_buf(),
                line: i + 1,
            };
            let (src, dst) = line.split_once('\t').ok_or_else(bad)?;
            let mut src_chars = src.chars();
            let mut dst_chars = dst.chars();
            let (s, d) = match (src_chars.next(), dst_chars.next()) {
                (Some(s), Some(d)) => (s, d),
                _ => return Err(bad()),
            };
            if src_chars.next().is_some() || dst_chars.next().is_some() {
                return Err(bad());
            }
            table.insert(s, d);
        }
        Ok(Self { table })
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let content = std::fs::read_to_string(path)?;
        Self::parse(path, &content)
    }

    pub fn apply_char(&self, c: char) -> char {
        self.table.get(&c).copied().unwrap_or(c)
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }
}

/// Applies a 1→1 character table; unmapped characters pass through.
pub fn simplify(text: &[char], mapping: &CharMapping) -> Vec<char> {
    text.iter().map(|&c| mapping.apply_char(c)).collect()
}

/// Cuts a sentence after every single-character word drawn from `punct_set`.
/// The punctuation word ends its clause; word order is preserved and empty
/// clauses are dropped.
pub fn split_clauses(
    sentence: &SegmentedSentence,
    punct_set: &BTreeSet<char>,
) -> Vec<SegmentedSentence> {
    let mut clauses = Vec::new();
    let mut chars = Vec::new();
    let mut lengths = Vec::new();
    let mut pos = 0;
    for &l in sentence.word_lengths() {
        chars.extend_from_slice(&sentence.chars()[pos..pos + l]);
        lengths.push(l);
        let is_cut = l == 1 && punct_set.contains(&sentence.chars()[pos]);
        pos += l;
        if is_cut {
            clauses.push(
                SegmentedSentence::new(
                    std::mem::take(&mut chars),
                    std::mem::take(&mut lengths),
                    sentence.criterion().clone(),
                )
                .expect("clause inherits a valid structure"),
            );
        }
    }
    if !chars.is_empty() {
        clauses.push(
            SegmentedSentence::new(chars, lengths, sentence.criterion().clone())
                .expect("clause inherits a valid structure"),
        );
    }
    clauses
}

/// Runs the four normalization procedures in order: character
/// simplification, full-width folding, alphanumeric-run replacement
/// (per word), clause splitting.
pub fn preprocess_sentence(
    sentence: &SegmentedSentence,
    mapping: &CharMapping,
    punct_set: &BTreeSet<char>,
) -> Vec<SegmentedSentence> {
    let mut chars = Vec::new();
    let mut lengths = Vec::new();
    let mut pos = 0;
    for &l in sentence.word_lengths() {
        let word = &sentence.chars()[pos..pos + l];
        pos += l;
        let word = simplify(word, mapping);
        let word = normalize_fullwidth(&word);
        let word = replace_alnum_runs(&word);
        lengths.push(word.len());
        chars.extend(word);
    }
    let normalized = SegmentedSentence::new(chars, lengths, sentence.criterion().clone())
        .expect("normalization keeps words non-empty");
    split_clauses(&normalized, punct_set)
}

/// Moves `floor(rate * |train|)` sentences into a dev set chosen by a seeded
/// shuffle; both sides keep their original relative order.
pub fn make_dev_split(
    train: Vec<SegmentedSentence>,
    rate: f64,
    seed: u64,
) -> Result<CorpusSplit> {
    if train.is_empty() {
        return Err(Error::EmptyCorpus("cannot split an empty training set"));
    }
    if !(rate > 0.0 && rate < 1.0) {
        return Err(Error::Rate(rate));
    }
    let n_dev = (rate * train.len() as f64).floor() as usize;
    let mut indices: Vec<usize> = (0..train.len()).collect();
    indices.shuffle(&mut seeded_rng(seed, "dev-split"));
    let mut chosen: Vec<usize> = indices[..n_dev].to_vec();
    chosen.sort_unstable();
    let mut is_dev = vec![false; train.len()];
    for &i in &chosen {
        is_dev[i] = true;
    }
    let mut dev = Vec::with_capacity(n_dev);
    let mut rest = Vec::with_capacity(train.len() - n_dev);
    for (i, s) in train.into_iter().enumerate() {
        if is_dev[i] {
            dev.push(s);
        } else {
            rest.push(s);
        }
    }
    Ok(CorpusSplit {
        train: rest,
        dev,
        test: Vec::new(),
        seed,
    })
}

/// Merges the train sets of several corpora into the joint pool and rewrites
/// the criterion of `floor(unc_fraction * N)` seeded-uniformly chosen
/// sentences to `unc`. The substitution is fixed at build time.
pub fn build_joint_corpus(
    train_sets: &[Vec<SegmentedSentence>],
    unc_fraction: f64,
    seed: u64,
) -> Result<JointCorpus> {
    if !(0.0..1.0).contains(&unc_fraction) {
        return Err(Error::Rate(unc_fraction));
    }
    let mut sentences: Vec<SegmentedSentence> =
        train_sets.iter().flat_map(|s| s.iter().cloned()).collect();
    if sentences.is_empty() {
        return Err(Error::EmptyCorpus("joint corpus has no sentences"));
    }
    let n_unc = (unc_fraction * sentences.len() as f64).floor() as usize;
    let mut indices: Vec<usize> = (0..sentences.len()).collect();
    indices.shuffle(&mut seeded_rng(seed, "joint-unc"));
    for &i in &indices[..n_unc] {
        sentences[i] = sentences[i].with_criterion(CriterionId::undefined());
    }
    let vocab = Vocab::build(&sentences);
    Ok(JointCorpus {
        sentences,
        vocab,
        unc_fraction,
        seed,
    })
}

/// Seeded uniform sample of `max(1, floor(rate * |train|))` sentences
/// without replacement, kept in their original order.
pub fn sample_low_resource(
    train: &[SegmentedSentence],
    rate: f64,
    seed: u64,
) -> Result<Vec<SegmentedSentence>> {
    if train.is_empty() {
        return Err(Error::EmptyCorpus("cannot sample from an empty training set"));
    }
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(Error::Rate(rate));
    }
    let n = ((rate * train.len() as f64).floor() as usize).max(1);
    let mut indices: Vec<usize> = (0..train.len()).collect();
    indices.shuffle(&mut seeded_rng(seed, "low-resource"));
    let mut chosen: Vec<usize> = indices[..n].to_vec();
    chosen.sort_unstable();
    Ok(chosen.iter().map(|&i| train[i].clone()).collect())
}

/// The default clause punctuation as a set.
pub fn default_punct_set() -> BTreeSet<char> {
    DEFAULT_CLAUSE_PUNCT.iter().copied().collect()
}
