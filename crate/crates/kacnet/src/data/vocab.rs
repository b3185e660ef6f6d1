//! Word ↔ id mapping with reserved control tokens.

use std::collections::HashMap;

use crate::error::{Error, Result};

pub const PAD_TOKEN: &str = "<pad>";
pub const BOS_TOKEN: &str = "<bos>";
pub const UNK_TOKEN: &str = "<unk>";

pub const PAD_ID: usize = 0;
pub const BOS_ID: usize = 1;
pub const UNK_ID: usize = 2;

/// Bijective word ↔ id map. Ids 0–2 are reserved for pad/bos/unk; the rest
/// are assigned to the sorted unique corpus words so construction is
/// deterministic.
#[derive(Clone, Debug)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn from_corpus_words<I, S>(corpus_words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut unique: Vec<String> = corpus_words
            .into_iter()
            .map(|w| w.as_ref().to_string())
            .filter(|w| w != PAD_TOKEN && w != BOS_TOKEN && w != UNK_TOKEN)
            .collect();
        unique.sort();
        unique.dedup();
        let mut words = vec![
            PAD_TOKEN.to_string(),
            BOS_TOKEN.to_string(),
            UNK_TOKEN.to_string(),
        ];
        words.extend(unique);
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        Vocabulary { words, index }
    }

    /// Rebuild from a stored word list (checkpoint restore).
    pub fn from_word_list(words: Vec<String>) -> Result<Self> {
        if words.len() < 3
            || words[PAD_ID] != PAD_TOKEN
            || words[BOS_ID] != BOS_TOKEN
            || words[UNK_ID] != UNK_TOKEN
        {
            return Err(Error::Vocabulary(
                "word list does not start with the reserved pad/bos/unk tokens".into(),
            ));
        }
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if index.insert(w.clone(), i).is_some() {
                return Err(Error::Vocabulary(format!("duplicate word `{}`", w)));
            }
        }
        Ok(Vocabulary { words, index })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn word(&self, id: usize) -> Result<&str> {
        self.words
            .get(id)
            .map(|s| s.as_str())
            .ok_or_else(|| Error::Vocabulary(format!("token id {} out of range", id)))
    }

    /// Map words to ids, sending out-of-vocabulary words to `<unk>`.
    pub fn encode(&self, words: &[String]) -> Vec<usize> {
        words
            .iter()
            .map(|w| self.id(w).unwrap_or(UNK_ID))
            .collect()
    }
}
