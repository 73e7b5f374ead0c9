//! Corpus-trained WordPiece tokenizer.
//!
//! Training starts from single characters (continuation pieces carry a `##`
//! prefix) and repeatedly merges the adjacent pair with the highest
//! `count(ab) / (count(a) * count(b))` until the vocabulary is full.
//! Segmentation is greedy longest-match-first per whitespace-separated word;
//! a word that cannot be covered becomes a single UNK.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const MASK: u32 = 2;
pub const SEP: u32 = 3;

const SPECIALS: [&str; 4] = ["[PAD]", "[UNK]", "[MASK]", "[SEP]"];
const CONT: &str = "##";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct WordPiece {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    max_piece_chars: usize,
}

impl From<Vec<String>> for WordPiece {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        let max_piece_chars = tokens
            .iter()
            .map(|t| t.strip_prefix(CONT).unwrap_or(t).chars().count())
            .max()
            .unwrap_or(1);
        Self {
            tokens,
            index,
            max_piece_chars,
        }
    }
}

impl From<WordPiece> for Vec<String> {
    fn from(w: WordPiece) -> Self {
        w.tokens
    }
}

fn pieces_of(word: &str) -> Vec<String> {
    word.chars()
        .enumerate()
        .map(|(i, c)| if i == 0 { c.to_string() } else { format!("{CONT}{c}") })
        .collect()
}

fn merged(a: &str, b: &str) -> String {
    format!("{a}{}", b.strip_prefix(CONT).unwrap_or(b))
}

impl WordPiece {
    pub fn train<'a, I>(corpus: I, vocab_size: usize) -> Result<Self>
    where
        I: IntoIterator<Item = &'a str>,
    {
        if vocab_size < 256 {
            return Err(Error::Config(format!("tokenizer vocab_size must be ≥ 256, got {vocab_size}")));
        }
        let mut word_counts: BTreeMap<&str, u64> = BTreeMap::new();
        let mut any = false;
        for text in corpus {
            any = true;
            for w in text.split_whitespace() {
                *word_counts.entry(w).or_default() += 1;
            }
        }
        if !any || word_counts.is_empty() {
            return Err(Error::Config("tokenizer corpus is empty".into()));
        }

        let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        let mut seen: std::collections::HashSet<String> = tokens.iter().cloned().collect();
        let mut words: Vec<(Vec<String>, u64)> = word_counts
            .into_iter()
            .map(|(w, c)| (pieces_of(w), c))
            .collect();
        let mut alphabet: Vec<String> = words.iter().flat_map(|(p, _)| p.iter().cloned()).collect();
        alphabet.sort();
        alphabet.dedup();
        for a in alphabet {
            if seen.insert(a.clone()) {
                tokens.push(a);
            }
        }

        while tokens.len() < vocab_size {
            let mut unit: HashMap<&str, u64> = HashMap::new();
            let mut pair: HashMap<(&str, &str), u64> = HashMap::new();
            for (p, c) in &words {
                for piece in p {
                    *unit.entry(piece).or_default() += c;
                }
                for w in p.windows(2) {
                    *pair.entry((&w[0], &w[1])).or_default() += c;
                }
            }
            // highest score, ties to the lexicographically smallest pair
            let best = pair
                .iter()
                .map(|(&(a, b), &c)| {
                    let score = c as f64 / (unit[a] as f64 * unit[b] as f64);
                    (score, a, b)
                })
                .max_by(|x, y| {
                    x.0.total_cmp(&y.0)
                        .then_with(|| (y.1, y.2).cmp(&(x.1, x.2)))
                });
            let Some((_, a, b)) = best else { break };
            let (a, b) = (a.to_string(), b.to_string());
            let m = merged(&a, &b);
            for (p, _) in words.iter_mut() {
                let mut i = 0;
                while i + 1 < p.len() {
                    if p[i] == a && p[i + 1] == b {
                        p[i] = m.clone();
                        p.remove(i + 1);
                    } else {
                        i += 1;
                    }
                }
            }
            if seen.insert(m.clone()) {
                tokens.push(m);
            }
        }
        Ok(Self::from(tokens))
    }

    pub fn vocab_size(&self) -> usize {
        self.tokens.len()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    fn encode_word(&self, word: &str, out: &mut Vec<u32>) {
        let chars: Vec<(usize, char)> = word.char_indices().collect();
        let mut ids = Vec::new();
        let mut start = 0;
        while start < chars.len() {
            let mut found = None;
            let max_end = (start + self.max_piece_chars).min(chars.len());
            for end in (start + 1..=max_end).rev() {
                let lo = chars[start].0;
                let hi = chars.get(end).map_or(word.len(), |c| c.0);
                let piece = if start == 0 {
                    word[lo..hi].to_string()
                } else {
                    format!("{CONT}{}", &word[lo..hi])
                };
                if let Some(id) = self.index.get(&piece) {
                    found = Some((*id, end));
                    break;
                }
            }
            match found {
                Some((id, end)) => {
                    ids.push(id);
                    start = end;
                }
                None => {
                    out.push(UNK);
                    return;
                }
            }
        }
        out.extend(ids);
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        let mut out = Vec::new();
        for w in text.split_whitespace() {
            self.encode_word(w, &mut out);
        }
        out
    }

    /// Inverse of [`WordPiece::encode`] up to whitespace normalisation
    /// (UNK words render as `[UNK]`).
    pub fn decode(&self, ids: &[u32]) -> String {
        let mut s = String::new();
        for &id in ids {
            let t = self.token(id).unwrap_or("[UNK]");
            match t.strip_prefix(CONT) {
                Some(rest) if !s.is_empty() => s.push_str(rest),
                _ => {
                    if !s.is_empty() {
                        s.push(' ');
                    }
                    s.push_str(t);
                }
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus() -> Vec<String> {
        let mut v = Vec::new();
        for i in 0..50 {
            v.push(format!("the tumor is stable and the patient tolerated therapy well {i}"));
            v.push("tumors were treated; patients reported pain.".to_string());
        }
        v
    }

    fn tok() -> WordPiece {
        let c = corpus();
        WordPiece::train(c.iter().map(String::as_str), 256).unwrap()
    }

    #[test]
    fn reserved_ids() {
        let t = tok();
        assert_eq!(t.id("[PAD]"), Some(PAD));
        assert_eq!(t.id("[UNK]"), Some(UNK));
        assert_eq!(t.id("[MASK]"), Some(MASK));
        assert_eq!(t.id("[SEP]"), Some(SEP));
        assert!(t.vocab_size() <= 256);
    }

    #[test]
    fn frequent_word_is_single_piece() {
        let t = tok();
        assert_eq!(t.encode("tumor").len(), 1);
    }

    #[test]
    fn unseen_word_segments_into_known_pieces() {
        let t = tok();
        let ids = t.encode("tumorpatient");
        assert!(ids.len() > 1);
        assert!(!ids.contains(&UNK));
        assert_eq!(t.decode(&ids), "tumorpatient");
    }

    #[test]
    fn unknown_character_is_unk() {
        let t = tok();
        assert_eq!(t.encode("tumor€"), vec![UNK]);
        assert_eq!(t.encode(""), Vec::<u32>::new());
    }

    #[test]
    fn roundtrip_up_to_whitespace() {
        let t = tok();
        let text = "  the   patient tolerated\ttherapy  well 17 ";
        let norm = text.split_whitespace().collect::<Vec<_>>().join(" ");
        assert_eq!(t.decode(&t.encode(text)), norm);
    }

    #[test]
    fn small_vocab_rejected() {
        assert!(WordPiece::train(["a b"], 100).is_err());
        assert!(WordPiece::train(Vec::<&str>::new(), 300).is_err());
    }

    #[test]
    fn serde_roundtrip() {
        let t = tok();
        let s = serde_json::to_string(&t).unwrap();
        let back: WordPiece = serde_json::from_str(&s).unwrap();
        assert_eq!(back, t);
    }
}
