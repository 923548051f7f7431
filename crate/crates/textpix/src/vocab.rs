//! Vocabulary construction and fixed-length token sequences.

use std::collections::HashMap;

use crate::error::{Error, Result};

pub const PAD_ID: u32 = 0;
pub const OOV_ID: u32 = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const OOV_TOKEN: &str = "<oov>";

/// Token-to-id map with reserved `<pad>` (0) and `<oov>` (1) entries.
/// Ids are contiguous from 0; remaining tokens are ordered by descending
/// corpus frequency, ties broken lexicographically, so construction is
/// deterministic for a given corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    pub min_frequency: u32,
}

/// Lowercases and splits on whitespace and punctuation (any run of
/// non-alphanumeric characters separates tokens).
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

impl Vocabulary {
    /// Builds a vocabulary over every token appearing at least
    /// `min_frequency` times in the corpus.
    pub fn build<'a>(corpus: impl IntoIterator<Item = &'a str>, min_frequency: u32) -> Result<Vocabulary> {
        let mut counts: HashMap<String, u32> = HashMap::new();
        let mut any = false;
        for text in corpus {
            any = true;
            for tok in tokenize(text) {
                *counts.entry(tok).or_insert(0) += 1;
            }
        }
        if !any {
            return Err(Error::InvalidInput("cannot build a vocabulary from an empty corpus".into()));
        }
        let mut kept: Vec<(String, u32)> = counts
            .into_iter()
            .filter(|(_, c)| *c >= min_frequency)
            .collect();
        kept.sort_by(|(ta, ca), (tb, cb)| cb.cmp(ca).then_with(|| ta.cmp(tb)));

        let mut tokens = vec![PAD_TOKEN.to_string(), OOV_TOKEN.to_string()];
        tokens.extend(kept.into_iter().map(|(t, _)| t));
        Ok(Vocabulary::from_tokens(tokens, min_frequency))
    }

    /// Reconstructs a vocabulary from its id-ordered token list (as stored
    /// in checkpoints). The first two entries must be the reserved tokens.
    pub fn from_tokens(tokens: Vec<String>, min_frequency: u32) -> Vocabulary {
        debug_assert!(tokens.len() >= 2 && tokens[0] == PAD_TOKEN && tokens[1] == OOV_TOKEN);
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Vocabulary {
            tokens,
            index,
            min_frequency,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false // reserved tokens are always present
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(OOV_ID)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    /// Tokens in id order, including the reserved entries.
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Maps the first `s` tokens of `text` to ids (unknown tokens become
    /// `<oov>`) and right-pads with `<pad>` to exactly `s` entries.
    pub fn tokenize_and_pad(&self, text: &str, s: usize) -> Vec<u32> {
        let mut ids: Vec<u32> = tokenize(text).iter().take(s).map(|t| self.id(t)).collect();
        ids.resize(s, PAD_ID);
        ids
    }
}
