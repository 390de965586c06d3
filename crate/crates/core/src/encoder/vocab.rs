use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::normalize_tokens;

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const CLS: u32 = 2;
pub const SEP: u32 = 3;

const RESERVED: [&str; 4] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]"];

/// Whitespace/punctuation vocabulary with four reserved ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    /// Keeps tokens seen at least `min_freq` times, most frequent first
    /// (ties alphabetical), up to `cap` entries including the reserved ones.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>, min_freq: usize, cap: usize) -> Self {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for text in texts {
            for tok in normalize_tokens(text) {
                *counts.entry(tok).or_default() += 1;
            }
        }
        let mut ranked: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(_, c)| *c >= min_freq.max(1))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let keep = cap.saturating_sub(RESERVED.len());
        let tokens = RESERVED
            .iter()
            .map(|s| s.to_string())
            .chain(ranked.into_iter().take(keep).map(|(t, _)| t))
            .collect();
        Self::from_tokens(tokens).expect("built vocabulary is well formed")
    }

    /// Rebuilds a vocabulary from its id-ordered token list.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < RESERVED.len() || tokens[..RESERVED.len()] != RESERVED {
            return Err(Error::invalid("vocabulary must start with the reserved tokens"));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::DuplicateKey(format!("vocabulary token {t:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Question,
    Document,
    /// Joint question+document sequence of the concatenated baseline.
    Pair,
}

/// `CLS tokens… SEP` followed by `PAD` up to the role's maximum length.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenSequence {
    ids: Vec<u32>,
    role: Role,
    mask: Vec<bool>,
    true_length: usize,
}

impl TokenSequence {
    /// Wraps already-mapped content ids, truncating to `max_len - 2`.
    pub fn from_content_ids(content: &[u32], role: Role, max_len: usize) -> Result<Self> {
        if max_len < 2 {
            return Err(Error::invalid(format!("maximum length {max_len} leaves no room for CLS/SEP")));
        }
        let keep = content.len().min(max_len - 2);
        let mut ids = Vec::with_capacity(max_len);
        ids.push(CLS);
        ids.extend_from_slice(&content[..keep]);
        ids.push(SEP);
        let true_length = ids.len();
        ids.resize(max_len, PAD);
        let mask = (0..max_len).map(|i| i < true_length).collect();
        Ok(Self {
            ids,
            role,
            mask,
            true_length,
        })
    }

    pub(crate) fn from_parts(ids: Vec<u32>, role: Role, true_length: usize) -> Self {
        let mask = (0..ids.len()).map(|i| i < true_length).collect();
        Self {
            ids,
            role,
            mask,
            true_length,
        }
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn role(&self) -> Role {
        self.role
    }

    /// `true` for real tokens, `false` for padding.
    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn true_length(&self) -> usize {
        self.true_length
    }

    pub fn max_len(&self) -> usize {
        self.ids.len()
    }

    /// Ids of the real tokens, CLS and SEP included.
    pub fn content(&self) -> &[u32] {
        &self.ids[..self.true_length]
    }
}

pub fn tokenize(text: &str, role: Role, vocab: &Vocab, max_len: usize) -> Result<TokenSequence> {
    let tokens = normalize_tokens(text);
    if tokens.is_empty() {
        return Err(Error::invalid("text is empty after normalization"));
    }
    let ids: Vec<u32> = tokens.iter().map(|t| vocab.id(t)).collect();
    TokenSequence::from_content_ids(&ids, role, max_len)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocab {
        Vocab::build(["what is x ? what is x ?"], 1, 100)
    }

    #[test]
    fn reserved_ids_are_fixed() {
        let v = vocab();
        assert_eq!(v.token(PAD), Some("[PAD]"));
        assert_eq!(v.token(SEP), Some("[SEP]"));
        assert_eq!(v.id("never-seen"), UNK);
    }

    #[test]
    fn short_question_is_padded() {
        let v = vocab();
        let s = tokenize("What is X?", Role::Question, &v, 8).unwrap();
        let want = [CLS, v.id("what"), v.id("is"), v.id("x"), v.id("?"), SEP, PAD, PAD];
        assert_eq!(s.ids(), &want);
        assert_eq!(s.true_length(), 6);
        assert_eq!(s.mask(), &[true, true, true, true, true, true, false, false]);
    }

    #[test]
    fn long_text_is_truncated_around_markers() {
        let v = vocab();
        let text = vec!["what"; 100].join(" ");
        let s = tokenize(&text, Role::Document, &v, 16).unwrap();
        assert_eq!(s.true_length(), 16);
        assert_eq!(s.ids()[0], CLS);
        assert_eq!(s.ids()[15], SEP);
        assert!(s.ids()[1..15].iter().all(|&i| i == v.id("what")));
    }

    #[test]
    fn unknown_token_maps_to_unk() {
        let v = vocab();
        let s = tokenize("what zebra", Role::Question, &v, 8).unwrap();
        assert_eq!(s.ids()[2], UNK);
    }

    #[test]
    fn empty_text_is_rejected() {
        assert!(matches!(
            tokenize("  \n ", Role::Question, &vocab(), 8),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn build_respects_frequency_and_cap() {
        let v = Vocab::build(["a a a b b c"], 2, 5);
        assert_eq!(v.len(), 5);
        assert_eq!(v.token(4), Some("a"));
        let v = Vocab::build(["a a a b b c"], 2, 100);
        assert_eq!(v.tokens()[4..], ["a".to_string(), "b".to_string()]);
    }
}
