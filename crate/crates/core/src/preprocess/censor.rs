//! Removal of sentences that mention metastasis or TNM staging.

use regex::Regex;

pub const CENSOR_PATTERN: &str = r"(\s[tnmTNM]\d|metastas)";

/// Sentence-level censor. Sentences end at `.`, `!` or `?` followed by
/// whitespace (or at end of text).
#[derive(Clone, Debug)]
pub struct Censor {
    pattern: Regex,
}

impl Default for Censor {
    fn default() -> Self {
        Self::new(CENSOR_PATTERN).expect("built-in pattern compiles")
    }
}

impl Censor {
    pub fn new(pattern: &str) -> Result<Self, regex::Error> {
        Ok(Self {
            pattern: Regex::new(pattern)?,
        })
    }

    /// Drops every sentence containing a match; survivors keep their text
    /// and order and are rejoined with single spaces.
    pub fn apply(&self, text: &str) -> String {
        split_sentences(text)
            .into_iter()
            .filter(|s| !self.pattern.is_match(s))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn matches(&self, text: &str) -> bool {
        split_sentences(text).iter().any(|s| self.pattern.is_match(s))
    }
}

pub fn censor_text(text: &str) -> String {
    Censor::default().apply(text)
}

/// Splits on terminal punctuation followed by whitespace. Each returned
/// sentence keeps its punctuation and has surrounding whitespace trimmed.
pub fn split_sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if matches!(c, '.' | '!' | '?') {
            let next_ws = chars.peek().is_none_or(|(_, n)| n.is_whitespace());
            if next_ws {
                let end = i + c.len_utf8();
                let s = text[start..end].trim();
                if !s.is_empty() {
                    out.push(s);
                }
                start = end;
            }
        }
    }
    let tail = text[start..].trim();
    if !tail.is_empty() {
        out.push(tail);
    }
    out
}
