//! Text normalization: lowercasing, punctuation stripping and a small
//! suffix-stripping stemmer.
//!
//! Stemming rules, tried in this order on purely alphabetic tokens. Only the
//! first rule whose suffix matches is considered; it applies when the
//! remaining stem has at least 3 characters, otherwise the token is kept.
//!
//! | suffix | condition                          |
//! |--------|------------------------------------|
//! | `ing`  |                                    |
//! | `ly`   |                                    |
//! | `es`   |                                    |
//! | `ed`   |                                    |
//! | `s`    | token does not end in `ss`, `us`, `is` |

const PUNCTUATION: [char; 10] = ['.', ',', '!', '?', ';', ':', '"', '(', ')', '\u{201c}'];
const MIN_STEM: usize = 3;
const SUFFIXES: [&str; 5] = ["ing", "ly", "es", "ed", "s"];

/// Pluggable text normalizer; [`SuffixStemmer`] is the built-in one.
pub trait Normalizer {
    fn normalize(&self, text: &str) -> String;
}

#[derive(Clone, Copy, Debug, Default)]
pub struct SuffixStemmer;

impl Normalizer for SuffixStemmer {
    fn normalize(&self, text: &str) -> String {
        normalize_text(text)
    }
}

pub fn stem(token: &str) -> &str {
    if !token.chars().all(|c| c.is_alphabetic()) {
        return token;
    }
    let Some(suffix) = SUFFIXES.iter().find(|s| token.ends_with(*s)) else {
        return token;
    };
    if *suffix == "s" && (token.ends_with("ss") || token.ends_with("us") || token.ends_with("is")) {
        return token;
    }
    let stem = &token[..token.len() - suffix.len()];
    if stem.chars().count() >= MIN_STEM {
        stem
    } else {
        token
    }
}

pub fn normalize_text(text: &str) -> String {
    let lowered: String = text
        .to_lowercase()
        .chars()
        .map(|c| match c {
            '\u{2019}' | '\u{2018}' => '\'',
            c if PUNCTUATION.contains(&c) || c == '\u{201d}' => ' ',
            c => c,
        })
        .collect();
    lowered
        .split_whitespace()
        .map(|t| t.trim_matches('\''))
        .filter(|t| !t.is_empty())
        .map(stem)
        .collect::<Vec<_>>()
        .join(" ")
}
