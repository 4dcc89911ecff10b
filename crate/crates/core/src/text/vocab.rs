use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::DataError;

pub type TokenId = usize;

pub const PAD: TokenId = 0;
pub const UNK: TokenId = 1;
pub const BOS: TokenId = 2;
pub const EOS: TokenId = 3;
pub const SPECIALS: [&str; 4] = ["<pad>", "<unk>", "<bos>", "<eos>"];

/// Bijective token/id map. Ids 0..4 are the special tokens.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl TryFrom<Vec<String>> for Vocabulary {
    type Error = DataError;

    fn try_from(tokens: Vec<String>) -> Result<Self, DataError> {
        Vocabulary::from_tokens(tokens)
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

impl Vocabulary {
    /// Rebuilds a vocabulary from its id-ordered token list.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self, DataError> {
        if tokens.len() < SPECIALS.len() || tokens[..4] != SPECIALS {
            return Err(DataError::Invalid("vocabulary must start with the four special tokens".into()));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (id, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), id).is_some() {
                return Err(DataError::Invalid(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Vocabulary { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// Builds a vocabulary from normalized texts: tokens seen at least
/// `min_freq` times, most frequent first (ties lexicographic), capped so the
/// total size including specials is at most `max_size`.
pub fn build_vocab<'a>(
    corpus: impl IntoIterator<Item = &'a str>,
    min_freq: usize,
    max_size: usize,
) -> Result<Vocabulary, DataError> {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    let mut docs = 0;
    for text in corpus {
        docs += 1;
        for tok in text.split_whitespace() {
            *counts.entry(tok).or_default() += 1;
        }
    }
    if docs == 0 {
        return Err(DataError::Invalid("cannot build a vocabulary from an empty corpus".into()));
    }
    let mut kept: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|(t, c)| *c >= min_freq && !SPECIALS.contains(t))
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    kept.truncate(max_size.saturating_sub(SPECIALS.len()));

    let tokens = SPECIALS
        .iter()
        .map(|s| s.to_string())
        .chain(kept.into_iter().map(|(t, _)| t.to_string()))
        .collect();
    Vocabulary::from_tokens(tokens)
}

/// Whitespace tokenization of normalized text; unknown tokens map to UNK and
/// EOS is appended.
pub fn tokenize(text: &str, vocab: &Vocabulary) -> Vec<TokenId> {
    text.split_whitespace()
        .map(|t| vocab.id(t).unwrap_or(UNK))
        .chain(std::iter::once(EOS))
        .collect()
}

/// Inverse of [`tokenize`]: stops at EOS and skips PAD and BOS.
pub fn detokenize(ids: &[TokenId], vocab: &Vocabulary) -> String {
    ids.iter()
        .take_while(|&&id| id != EOS)
        .filter(|&&id| id != PAD && id != BOS)
        .filter_map(|&id| vocab.token(id))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Keeps the last `max_len` ids (the most recent context, including EOS).
pub fn truncate_left(ids: &mut Vec<TokenId>, max_len: usize) {
    if ids.len() > max_len {
        ids.drain(..ids.len() - max_len);
    }
}

/// Keeps the first `max_len - 1` ids and re-terminates with EOS.
pub fn truncate_right(ids: &mut Vec<TokenId>, max_len: usize) {
    if ids.len() > max_len {
        ids.truncate(max_len.saturating_sub(1));
        ids.push(EOS);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn build_examples() {
        let v = build_vocab(["a a b"], 1, 100).unwrap();
        assert_eq!(v.len(), 6);
        assert_eq!(v.id("a"), Some(4));
        assert_eq!(v.id("b"), Some(5));

        let v = build_vocab(["a a b"], 2, 100).unwrap();
        assert_eq!(v.len(), 5);
        assert_eq!(v.id("b"), None);

        let v = build_vocab(["a a b"], 1, 4).unwrap();
        assert_eq!(v.tokens(), &SPECIALS.map(String::from));

        assert!(build_vocab(Vec::<&str>::new(), 1, 10).is_err());
    }

    #[test]
    fn ties_break_lexicographically() {
        let v = build_vocab(["c b a c b a"], 1, 100).unwrap();
        assert_eq!(&v.tokens()[4..], &["a", "b", "c"]);
    }

    #[test]
    fn tokenize_examples() {
        let v = build_vocab(["i was happy"], 1, 100).unwrap();
        assert_eq!(tokenize("", &v), vec![EOS]);
        let ids = tokenize("i was happy", &v);
        assert_eq!(ids, vec![v.id("i").unwrap(), v.id("was").unwrap(), v.id("happy").unwrap(), EOS]);
        assert_eq!(tokenize("i was sad", &v)[2], UNK);
    }

    #[test]
    fn truncation() {
        let mut ids = vec![10, 11, 12, 13, EOS];
        truncate_left(&mut ids, 3);
        assert_eq!(ids, vec![12, 13, EOS]);
        let mut ids = vec![10, 11, 12, 13, EOS];
        truncate_right(&mut ids, 3);
        assert_eq!(ids, vec![10, 11, EOS]);
    }

    proptest! {
        #[test]
        fn tokenize_detokenize_roundtrip(words in proptest::collection::vec("[a-z]{1,6}", 0..12)) {
            let text = words.join(" ");
            let v = build_vocab([text.as_str(), "filler"], 1, 1000).unwrap();
            let ids = tokenize(&text, &v);
            prop_assert!(ids.iter().all(|&id| id < v.len()));
            prop_assert_eq!(detokenize(&ids, &v), text);
        }
    }
}
