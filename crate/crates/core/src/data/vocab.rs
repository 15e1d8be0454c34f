use std::collections::HashMap;

use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const CLS: u32 = 1;
pub const SEP: u32 = 2;
pub const UNK: u32 = 3;
pub const RESERVED: [&str; 4] = ["[PAD]", "[CLS]", "[SEP]", "[UNK]"];

/// Whitespace vocabulary with four reserved ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    /// Ranks lowercased whitespace tokens by frequency (ties broken
    /// lexicographically) and keeps as many as fit under `cap`, reserved
    /// ids included.
    pub fn build<I, S>(lines: I, cap: usize) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        if cap < RESERVED.len() + 1 {
            return Err(Error::Config(format!(
                "vocabulary cap {cap} must be at least 5"
            )));
        }
        let mut counts: HashMap<String, usize> = HashMap::new();
        for line in lines {
            for tok in line.as_ref().split_whitespace() {
                *counts.entry(tok.to_lowercase()).or_default() += 1;
            }
        }
        if counts.is_empty() {
            return Err(Error::Data(
                "cannot build a vocabulary from an empty corpus".into(),
            ));
        }
        let mut ranked: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(t, _)| !RESERVED.contains(&t.as_str()))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(cap - RESERVED.len());
        let tokens = RESERVED
            .iter()
            .map(|s| s.to_string())
            .chain(ranked.into_iter().map(|(t, _)| t))
            .collect();
        Self::from_tokens(tokens)
    }

    /// Rebuilds a vocabulary from its id-ordered token list.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < RESERVED.len() || tokens[..RESERVED.len()] != RESERVED {
            return Err(Error::Data(
                "vocabulary does not start with the reserved tokens".into(),
            ));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (id, tok) in tokens.iter().enumerate() {
            if index.insert(tok.clone(), id as u32).is_some() {
                return Err(Error::Data(format!("duplicate vocabulary token {tok:?}")));
            }
        }
        Ok(Vocab { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
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

    /// `[CLS] ids… [SEP]`, truncated so the whole sequence fits `max_len`.
    pub fn tokenize(&self, text: &str, max_len: usize) -> Vec<u32> {
        debug_assert!(max_len >= 3);
        let body = max_len.saturating_sub(2);
        let mut ids = Vec::with_capacity(max_len);
        ids.push(CLS);
        ids.extend(
            text.split_whitespace()
                .take(body)
                .map(|t| self.id(&t.to_lowercase())),
        );
        ids.push(SEP);
        ids
    }

    pub fn detokenize(&self, ids: &[u32]) -> Vec<&str> {
        ids.iter().filter_map(|&i| self.token(i)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frequency_then_lexicographic_order() {
        let v = Vocab::build(["a b", "a"], 10).unwrap();
        assert_eq!(v.len(), 6);
        assert_eq!(v.id("a"), 4);
        assert_eq!(v.id("b"), 5);

        let v = Vocab::build(["x y", "y x"], 10).unwrap();
        assert_eq!(v.id("x"), 4);
        assert_eq!(v.id("y"), 5);
    }

    #[test]
    fn cap_includes_reserved_ids() {
        let v = Vocab::build(["c c c b b a"], 6).unwrap();
        assert_eq!(v.len(), 6);
        assert_eq!(v.id("a"), UNK);
        assert!(Vocab::build(["a"], 4).is_err());
    }

    #[test]
    fn empty_corpus_is_rejected() {
        assert!(matches!(
            Vocab::build(Vec::<String>::new(), 10),
            Err(Error::Data(_))
        ));
        assert!(matches!(Vocab::build(["   "], 10), Err(Error::Data(_))));
    }

    #[test]
    fn tokenize_examples() {
        let v = Vocab::build(["a b", "a"], 10).unwrap();
        assert_eq!(v.tokenize("", 8), vec![CLS, SEP]);
        assert_eq!(v.tokenize("a zzz", 8), vec![CLS, 4, UNK, SEP]);
        assert_eq!(v.tokenize("A B", 8), vec![CLS, 4, 5, SEP]);
        let long = vec!["a"; 100].join(" ");
        assert_eq!(v.tokenize(&long, 16).len(), 16);
        assert_eq!(*v.tokenize(&long, 16).last().unwrap(), SEP);
    }

    #[test]
    fn reserved_ids_are_fixed() {
        let v = Vocab::build(["[cls] hello"], 10).unwrap();
        for (i, r) in RESERVED.iter().enumerate() {
            assert_eq!(v.id(r), i as u32);
        }
    }
}
