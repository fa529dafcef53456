//! Word segmentation ↔ BMES label conversion.
//!
//! A word of length 1 encodes as `S`; longer words as `B M… E`. Decoding
//! inverts that exactly on well-formed sequences and repairs arbitrary label
//! noise with a boundary automaton: a boundary opens before every `B`/`S`,
//! closes after every `E`/`S`, and a dangling word closes at sequence end.

use crate::error::{Error, Result};

/// Per-character segmentation label. The discriminant order `B < M < E < S`
/// is the classifier output order and the prediction tie-break order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Tag {
    B = 0,
    M = 1,
    E = 2,
    S = 3,
}

impl Tag {
    pub const ALL: [Tag; 4] = [Tag::B, Tag::M, Tag::E, Tag::S];
    /// Number of distinct labels.
    pub const COUNT: usize = 4;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Tag> {
        Tag::ALL.get(i).copied()
    }

    pub fn letter(self) -> char {
        match self {
            Tag::B => 'B',
            Tag::M => 'M',
            Tag::E => 'E',
            Tag::S => 'S',
        }
    }
}

/// ASCII dump of a label sequence, e.g. `BEBEBME`.
pub fn format_tags(tags: &[Tag]) -> String {
    tags.iter().map(|t| t.letter()).collect()
}

/// Labels for a gold word structure: one tag per character.
pub fn encode_tags(word_lengths: &[usize]) -> Vec<Tag> {
    let mut tags = Vec::with_capacity(word_lengths.iter().sum());
    for &len in word_lengths {
        match len {
            0 => {}
            1 => tags.push(Tag::S),
            n => {
                tags.push(Tag::B);
                tags.extend(std::iter::repeat(Tag::M).take(n - 2));
                tags.push(Tag::E);
            }
        }
    }
    tags
}

/// True when the sequence could have been produced by [`encode_tags`].
pub fn is_well_formed(tags: &[Tag]) -> bool {
    let mut in_word = false;
    for &t in tags {
        match (in_word, t) {
            (false, Tag::S) => {}
            (false, Tag::B) => in_word = true,
            (true, Tag::M) => {}
            (true, Tag::E) => in_word = false,
            _ => return false,
        }
    }
    !in_word
}

/// Word lengths decoded from a label sequence over `chars`.
///
/// Ill-formed sequences are repaired deterministically and the result is
/// always a valid segmentation of the same length.
pub fn decode_tags(tags: &[Tag], chars: &[char]) -> Result<Vec<usize>> {
    if tags.len() != chars.len() {
        return Err(Error::Alignment {
            labels: tags.len(),
            chars: chars.len(),
            context: None,
        });
    }
    let mut lengths = Vec::new();
    let mut current = 0usize;
    for &t in tags {
        if matches!(t, Tag::B | Tag::S) && current > 0 {
            lengths.push(current);
            current = 0;
        }
        current += 1;
        if matches!(t, Tag::E | Tag::S) {
            lengths.push(current);
            current = 0;
        }
    }
    if current > 0 {
        lengths.push(current);
    }
    Ok(lengths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use Tag::*;

    #[test]
    fn encode_matches_published_rows() {
        // 李娜 | 进入 | 半决赛 and the single-character variant.
        assert_eq!(encode_tags(&[2, 2, 3]), vec![B, E, B, E, B, M, E]);
        assert_eq!(encode_tags(&[1, 1]), vec![S, S]);
        assert_eq!(encode_tags(&[5]), vec![B, M, M, M, E]);
    }

    #[test]
    fn decode_inverts_encode() {
        let chars: Vec<char> = "李娜进入半决赛".chars().collect();
        let lens = decode_tags(&[B, E, B, E, B, M, E], &chars).unwrap();
        assert_eq!(lens, vec![2, 2, 3]);
    }

    #[test]
    fn decode_all_s_gives_singletons() {
        let chars: Vec<char> = "abc".chars().collect();
        assert_eq!(decode_tags(&[S, S, S], &chars).unwrap(), vec![1, 1, 1]);
    }

    #[test]
    fn decode_repairs_ill_formed() {
        let chars: Vec<char> = "abc".chars().collect();
        // No boundary signal before the closing E: one 3-character word.
        assert_eq!(decode_tags(&[M, M, E], &chars).unwrap(), vec![3]);
        // Dangling B at the end closes at sequence end.
        assert_eq!(decode_tags(&[S, S, B], &chars).unwrap(), vec![1, 1, 1]);
        assert_eq!(decode_tags(&[B, B, E], &chars).unwrap(), vec![1, 2]);
        assert_eq!(decode_tags(&[E, M, S], &chars).unwrap(), vec![1, 1, 1]);
    }

    #[test]
    fn decode_checks_alignment() {
        let chars: Vec<char> = "ab".chars().collect();
        assert!(decode_tags(&[S], &chars).is_err());
    }

    #[test]
    fn encode_output_well_formed() {
        assert!(is_well_formed(&encode_tags(&[1, 4, 2, 1])));
        assert!(!is_well_formed(&[M, M, E]));
        assert!(!is_well_formed(&[B, B, E]));
        assert!(!is_well_formed(&[B, M]));
    }

    #[test]
    fn tag_letters_roundtrip() {
        assert_eq!(format_tags(&[B, E, B, E, B, M, E]), "BEBEBME");
        for (i, t) in Tag::ALL.iter().enumerate() {
            assert_eq!(Tag::from_index(i), Some(*t));
        }
        assert_eq!(Tag::from_index(4), None);
    }

    fn word_lengths_strategy() -> impl Strategy<Value = Vec<usize>> {
        proptest::collection::vec(1usize..6, 1..12)
    }

    proptest! {
        #[test]
        fn roundtrip_identity(lens in word_lengths_strategy()) {
            let n: usize = lens.iter().sum();
            let chars = vec!['字'; n];
            let tags = encode_tags(&lens);
            prop_assert!(is_well_formed(&tags));
            prop_assert_eq!(decode_tags(&tags, &chars).unwrap(), lens);
        }

        // Repair always yields a valid segmentation, even on label noise.
        #[test]
        fn decode_valid_on_noise(raw in proptest::collection::vec(0usize..4, 1..24)) {
            let tags: Vec<Tag> = raw.iter().map(|&i| Tag::from_index(i).unwrap()).collect();
            let chars = vec!['字'; tags.len()];
            let lens = decode_tags(&tags, &chars).unwrap();
            prop_assert!(!lens.is_empty());
            prop_assert!(lens.iter().all(|&l| l >= 1));
            prop_assert_eq!(lens.iter().sum::<usize>(), tags.len());
        }
    }
}
