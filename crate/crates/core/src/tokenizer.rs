//! Deterministic normalization and tokenization shared by every scorer,
//! language model and metric in the crate.
//!
//! Text is NFC-normalized and lowercased. Runs of alphanumeric characters
//! form word tokens; every other non-whitespace character becomes a token of
//! its own. Reserved markers such as `<row>` therefore cannot be produced
//! from natural text: the angle brackets are always split off.

use std::collections::BTreeSet;
use std::fmt;
use std::ops::Deref;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

/// An ordered sequence of non-empty tokens.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenSeq(Vec<String>);

impl TokenSeq {
    pub fn new() -> Self {
        Self(Vec::new())
    }

    /// Wraps already-tokenized strings. Empty strings are dropped so the
    /// no-empty-token invariant holds.
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self(
            tokens
                .into_iter()
                .map(Into::into)
                .filter(|t: &String| !t.is_empty())
                .collect(),
        )
    }

    pub fn push(&mut self, token: impl Into<String>) {
        let token = token.into();
        if !token.is_empty() {
            self.0.push(token);
        }
    }

    pub fn into_inner(self) -> Vec<String> {
        self.0
    }

    pub fn join(&self, sep: &str) -> String {
        self.0.join(sep)
    }
}

impl Deref for TokenSeq {
    type Target = [String];

    fn deref(&self) -> &[String] {
        &self.0
    }
}

impl fmt::Display for TokenSeq {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.join(" "))
    }
}

impl IntoIterator for TokenSeq {
    type Item = String;
    type IntoIter = std::vec::IntoIter<String>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.into_iter()
    }
}

impl<'a> IntoIterator for &'a TokenSeq {
    type Item = &'a String;
    type IntoIter = std::slice::Iter<'a, String>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

pub fn tokenize(text: &str) -> TokenSeq {
    let normalized: String = text.nfc().collect();
    let lowered: String = normalized.to_lowercase().nfc().collect();

    let mut tokens = Vec::new();
    let mut word = String::new();
    for ch in lowered.chars() {
        if ch.is_alphanumeric() {
            word.push(ch);
            continue;
        }
        if !word.is_empty() {
            tokens.push(std::mem::take(&mut word));
        }
        if !ch.is_whitespace() {
            tokens.push(ch.to_string());
        }
    }
    if !word.is_empty() {
        tokens.push(word);
    }
    TokenSeq(tokens)
}

/// True when the token carries no alphanumeric character.
pub fn is_punctuation(token: &str) -> bool {
    !token.chars().any(char::is_alphanumeric)
}

/// The set-of-words view of a token sequence. Punctuation-only tokens are
/// left out so overlap measures content, not punctuation.
pub fn word_set<'a, I>(tokens: I) -> BTreeSet<String>
where
    I: IntoIterator<Item = &'a String>,
{
    tokens
        .into_iter()
        .filter(|t| !is_punctuation(t))
        .cloned()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(s: &str) -> Vec<String> {
        tokenize(s).into_inner()
    }

    #[test]
    fn splits_punctuation_and_lowercases() {
        assert_eq!(
            toks("John Smith is a writer."),
            ["john", "smith", "is", "a", "writer", "."]
        );
        assert!(toks("").is_empty());
        assert!(toks("   \t\n").is_empty());
    }

    #[test]
    fn golden_hyphen_and_parens() {
        assert_eq!(
            toks("ana-maria (b. 1950)"),
            ["ana", "-", "maria", "(", "b", ".", "1950", ")"]
        );
    }

    #[test]
    fn markers_are_split() {
        assert_eq!(toks("<row>"), ["<", "row", ">"]);
        assert_eq!(toks("<hal_0>"), ["<", "hal", "_", "0", ">"]);
    }

    #[test]
    fn nfc_composes_before_splitting() {
        // "e" + combining acute must stay inside the word
        assert_eq!(toks("Cafe\u{301} noir"), ["café", "noir"]);
    }

    #[test]
    fn word_set_dedups_and_drops_punctuation() {
        let s = |v: &[&str]| TokenSeq::from_tokens(v.iter().copied());
        let set = word_set(&s(&["a", "a", "b"]));
        assert_eq!(set.into_iter().collect::<Vec<_>>(), ["a", "b"]);
        assert!(word_set(&s(&[])).is_empty());
        let set = word_set(&s(&["john", ".", "john"]));
        assert_eq!(set.into_iter().collect::<Vec<_>>(), ["john"]);
    }

    proptest! {
        #[test]
        fn tokenize_is_idempotent(s in "[a-zA-Z0-9 .,;:()'\\-éÉßİ<>_\u{301}]{0,40}") {
            let once = tokenize(&s);
            let twice = tokenize(&once.join(" "));
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn no_empty_tokens_and_set_not_larger(s in "\\PC{0,60}") {
            let t = tokenize(&s);
            prop_assert!(t.iter().all(|x| !x.is_empty()));
            prop_assert!(word_set(&t).len() <= t.len());
            prop_assert!(t.iter().all(|x| !x.starts_with('<') || x.len() == 1));
        }
    }
}
