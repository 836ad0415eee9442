//! Character inventory shared by every model head.
//!
//! Characters get dense ids `0..len`. Reserved symbols live outside that
//! range and are fixed by convention:
//!
//! * CTC class space has size `len + 1`; the blank is class 0 and character
//!   `i` is class `i + 1`.
//! * Decoder token space has size `len + 3`; character `i` is token `i`,
//!   then SOS = `len`, EOS = `len + 1`, PAD = `len + 2`.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Result, ScribeError};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alphabet {
    chars: Vec<char>,
    #[serde(skip)]
    index: HashMap<char, usize>,
}

impl Alphabet {
    /// Build from any character iterator; duplicates collapse, order is sorted.
    pub fn from_chars<I: IntoIterator<Item = char>>(chars: I) -> Self {
        let mut chars: Vec<char> = chars.into_iter().collect();
        chars.sort_unstable();
        chars.dedup();
        let index = chars.iter().enumerate().map(|(i, &c)| (c, i)).collect();
        Self { chars, index }
    }

    /// Rebuild the lookup table (after deserialization).
    pub fn rebuild_index(&mut self) {
        self.index = self.chars.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    }

    pub fn len(&self) -> usize {
        self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    /// Canonical string form (used in manifest headers and compat checks).
    pub fn key(&self) -> String {
        self.chars.iter().collect()
    }

    pub fn char_to_id(&self, c: char) -> Option<usize> {
        if self.index.len() != self.chars.len() {
            // index may be empty after deserialization
            return self.chars.binary_search(&c).ok();
        }
        self.index.get(&c).copied()
    }

    pub fn id_to_char(&self, id: usize) -> Option<char> {
        self.chars.get(id).copied()
    }

    pub fn contains(&self, c: char) -> bool {
        self.char_to_id(c).is_some()
    }

    /// Encode a transcript into character ids.
    pub fn encode(&self, transcript: &str) -> Result<Vec<usize>> {
        transcript
            .chars()
            .map(|c| {
                self.char_to_id(c).ok_or(ScribeError::UnsupportedCharacter {
                    ch: c,
                    word: transcript.to_string(),
                })
            })
            .collect()
    }

    /// Decode character ids back into a transcript.
    pub fn decode(&self, ids: &[usize]) -> Result<String> {
        ids.iter()
            .map(|&id| {
                self.id_to_char(id).ok_or_else(|| {
                    ScribeError::InvalidInput(format!("character id {id} out of range"))
                })
            })
            .collect()
    }

    // CTC class space: blank + characters.

    pub const BLANK_CLASS: usize = 0;

    pub fn ctc_classes(&self) -> usize {
        self.len() + 1
    }

    pub fn char_id_to_class(&self, id: usize) -> usize {
        id + 1
    }

    pub fn class_to_char_id(&self, class: usize) -> Option<usize> {
        (class > 0 && class <= self.len()).then(|| class - 1)
    }

    // Decoder token space: characters + SOS/EOS/PAD.

    pub fn td_tokens(&self) -> usize {
        self.len() + 3
    }

    pub fn sos(&self) -> usize {
        self.len()
    }

    pub fn eos(&self) -> usize {
        self.len() + 1
    }

    pub fn pad(&self) -> usize {
        self.len() + 2
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sorted_and_deduped() {
        let a = Alphabet::from_chars("banana".chars());
        assert_eq!(a.chars(), &['a', 'b', 'n']);
        assert_eq!(a.len(), 3);
    }

    #[test]
    fn reserved_ids_disjoint_from_chars() {
        let a = Alphabet::from_chars("abc".chars());
        assert_eq!(a.sos(), 3);
        assert_eq!(a.eos(), 4);
        assert_eq!(a.pad(), 5);
        assert_eq!(Alphabet::BLANK_CLASS, 0);
        assert_eq!(a.char_id_to_class(0), 1);
        assert_eq!(a.class_to_char_id(1), Some(0));
        assert_eq!(a.class_to_char_id(0), None);
    }

    #[test]
    fn unknown_char_is_an_error() {
        let a = Alphabet::from_chars("ab".chars());
        assert!(a.encode("abz").is_err());
    }

    proptest! {
        #[test]
        fn encode_decode_roundtrip(word in "[a-z0-9]{1,12}") {
            let a = Alphabet::from_chars(('a'..='z').chain('0'..='9'));
            let ids = a.encode(&word).unwrap();
            prop_assert_eq!(a.decode(&ids).unwrap(), word);
        }
    }
}
