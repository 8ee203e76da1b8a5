use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::metrics::normalize_answer;

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const END_ID: usize = 0;

pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";
pub const END_TOKEN: &str = "<end>";

/// Word list where the line index is the id. The first two entries are
/// reserved: pad/unknown for questions, end/unknown for answers.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl Vocabulary {
    fn from_entries(words: Vec<String>, reserved: [&str; 2]) -> Result<Self> {
        if words.len() < 2 || words[0] != reserved[0] || words[1] != reserved[1] {
            return Err(Error::Invalid(format!(
                "vocabulary must start with the reserved entries {} and {}",
                reserved[0], reserved[1]
            )));
        }
        let mut index = BTreeMap::new();
        for (i, w) in words.iter().enumerate() {
            let key = if i < 2 { w.clone() } else { normalize_answer(w) };
            if key.is_empty() || key.contains(' ') {
                return Err(Error::Invalid(format!("vocabulary entry {i} `{w}` is not a single word")));
            }
            if index.insert(key, i).is_some() {
                return Err(Error::Invalid(format!("duplicate vocabulary entry `{w}` at line {}", i + 1)));
            }
        }
        Ok(Self { words, index })
    }

    /// Question vocabulary from file lines (reserved entries included).
    pub fn question_from_lines<I, S>(lines: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        Self::from_entries(lines.into_iter().map(|s| s.as_ref().trim().to_string()).collect(), [PAD_TOKEN, UNK_TOKEN])
    }

    pub fn answer_from_lines<I, S>(lines: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        Self::from_entries(lines.into_iter().map(|s| s.as_ref().trim().to_string()).collect(), [END_TOKEN, UNK_TOKEN])
    }

    /// Question vocabulary over `words` (reserved entries prepended, duplicates dropped).
    pub fn question<S: AsRef<str>>(words: &[S]) -> Self {
        Self::with_reserved(words, [PAD_TOKEN, UNK_TOKEN])
    }

    pub fn answer<S: AsRef<str>>(words: &[S]) -> Self {
        Self::with_reserved(words, [END_TOKEN, UNK_TOKEN])
    }

    fn with_reserved<S: AsRef<str>>(words: &[S], reserved: [&str; 2]) -> Self {
        let mut all: Vec<String> = reserved.iter().map(|s| s.to_string()).collect();
        for w in words {
            let w = normalize_answer(w.as_ref());
            if !w.is_empty() && !w.contains(' ') && !all.contains(&w) {
                all.push(w);
            }
        }
        Self::from_entries(all, reserved).expect("deduplicated")
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn word(&self, id: usize) -> Option<&str> {
        self.words.get(id).map(String::as_str)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// Case-insensitive lookup; reserved entries are never matched.
    pub fn get(&self, word: &str) -> Option<usize> {
        self.index.get(&normalize_answer(word)).copied().filter(|&i| i >= 2)
    }

    /// Ids for `words`, with unknown words mapped to [`UNK_ID`].
    pub fn encode<S: AsRef<str>>(&self, words: &[S]) -> Vec<usize> {
        words.iter().map(|w| self.get(w.as_ref()).unwrap_or(UNK_ID)).collect()
    }
}
