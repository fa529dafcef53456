//! On-disk corpus formats.
//!
//! * Segmented corpus: one clause per line, words separated by one ASCII
//!   space; blank lines ignored.
//! * Joint corpus: `criterion_name<TAB>word word word` per line.
//! * Raw prediction input: one clause per line.

use std::fs;
use std::path::Path;

use crate::corpus::{CriterionId, JointCorpus, SegmentedSentence, Vocab};
use crate::error::{Error, Result};

/// Reads a segmented corpus file, tagging every sentence with `criterion`.
pub fn read_segmented(path: &Path, criterion: &CriterionId) -> Result<Vec<SegmentedSentence>> {
    let content = fs::read_to_string(path)?;
    parse_segmented(path, &content, criterion)
}

/// Parses segmented-corpus text (one clause per line, space-separated words).
pub fn parse_segmented(
    path: &Path,
    content: &str,
    criterion: &CriterionId,
) -> Result<Vec<SegmentedSentence>> {
    let mut out = Vec::new();
    for (i, line) in content.lines().enumerate() {
        let words: Vec<&str> = line.split(' ').filter(|w| !w.is_empty()).collect();
        if words.is_empty() {
            continue;
        }
        let sentence =
            SegmentedSentence::from_words(&words, criterion.clone()).map_err(|e| {
                Error::FileFormat {
                    path: path.to_path_buf(),
                    msg: format!("line {}: {e}", i + 1),
                }
            })?;
        out.push(sentence);
    }
    Ok(out)
}

/// Serializes sentences in segmented-corpus format.
pub fn format_segmented(sentences: &[SegmentedSentence]) -> String {
    let mut out = String::new();
    for s in sentences {
        out.push_str(&s.words().join(" "));
        out.push('\n');
    }
    out
}

pub fn write_segmented(path: &Path, sentences: &[SegmentedSentence]) -> Result<()> {
    fs::write(path, format_segmented(sentences))?;
    Ok(())
}

/// Serializes the joint corpus as `criterion<TAB>words` lines.
pub fn format_joint(sentences: &[SegmentedSentence]) -> String {
    let mut out = String::new();
    for s in sentences {
        out.push_str(s.criterion().name());
        out.push('\t');
        out.push_str(&s.words().join(" "));
        out.push('\n');
    }
    out
}

pub fn write_joint(path: &Path, corpus: &JointCorpus) -> Result<()> {
    fs::write(path, format_joint(&corpus.sentences))?;
    Ok(())
}

/// Loads a joint corpus file, rebuilding the vocabulary from its contents.
pub fn read_joint(path: &Path) -> Result<JointCorpus> {
    let content = fs::read_to_string(path)?;
    let mut sentences = Vec::new();
    for (i, line) in content.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let bad = |msg: String| Error::FileFormat {
            path: path.to_path_buf(),
            msg: format!("line {}: {msg}", i + 1),
        };
        let (name, rest) = line
            .split_once('\t')
            .ok_or_else(|| bad("missing criterion column".into()))?;
        let criterion = CriterionId::new(name).map_err(|e| bad(e.to_string()))?;
        let words: Vec<&str> = rest.split(' ').filter(|w| !w.is_empty()).collect();
        let sentence = SegmentedSentence::from_words(&words, criterion)
            .map_err(|e| bad(e.to_string()))?;
        sentences.push(sentence);
    }
    if sentences.is_empty() {
        return Err(Error::EmptyCorpus("joint corpus file has no sentences"));
    }
    let unc = sentences
        .iter()
        .filter(|s| s.criterion().is_undefined())
        .count();
    let unc_fraction = unc as f64 / sentences.len() as f64;
    let vocab = Vocab::build(&sentences);
    Ok(JointCorpus {
        sentences,
        vocab,
        unc_fraction,
        seed: 0,
    })
}

/// Reads raw prediction input: one clause per line, blank lines dropped.
pub fn read_raw_lines(path: &Path) -> Result<Vec<Vec<char>>> {
    let content = fs::read_to_string(path)?;
    Ok(content
        .lines()
        .map(|l| l.chars().collect::<Vec<char>>())
        .collect())
}
