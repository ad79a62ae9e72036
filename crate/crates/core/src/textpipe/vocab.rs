use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use super::{is_special, SPECIALS, UNK_ID};
use crate::error::{Error, Result};

pub const DEFAULT_MAX_VOCAB: usize = 60_000;

/// Frequency-ranked token ↔ id map. Specials hold ids `0..7` in fixed order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    id_to_token: Vec<String>,
    token_to_id: HashMap<String, u32>,
    max_size: usize,
    min_freq: usize,
}

impl Vocabulary {
    /// Keeps the `max_size - 7` most frequent corpus tokens seen at least
    /// `min_freq` times. Equal counts rank by first occurrence.
    pub fn build<'a, I, S>(tokens: I, max_size: usize, min_freq: usize) -> Result<Self>
    where
        I: IntoIterator<Item = &'a S>,
        S: AsRef<str> + 'a + ?Sized,
    {
        if max_size <= SPECIALS.len() {
            return Err(Error::invalid(format!(
                "max_size {max_size} must exceed the {} reserved tokens",
                SPECIALS.len()
            )));
        }
        if min_freq == 0 {
            return Err(Error::invalid("min_freq must be at least 1"));
        }
        // (count, first position)
        let mut counts: HashMap<&str, (usize, usize)> = HashMap::new();
        for (pos, tok) in tokens.into_iter().enumerate() {
            let tok = tok.as_ref();
            if is_special(tok) {
                continue;
            }
            counts.entry(tok).or_insert((0, pos)).0 += 1;
        }
        let mut ranked: Vec<(&str, usize, usize)> = counts
            .into_iter()
            .filter(|(_, (c, _))| *c >= min_freq)
            .map(|(t, (c, p))| (t, c, p))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
        ranked.truncate(max_size - SPECIALS.len());

        let mut id_to_token: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        id_to_token.extend(ranked.into_iter().map(|(t, _, _)| t.to_string()));
        Self::from_tokens(id_to_token, max_size, min_freq)
    }

    /// Vocabulary from an explicit id-ordered token list that starts with the specials.
    pub fn from_tokens(id_to_token: Vec<String>, max_size: usize, min_freq: usize) -> Result<Self> {
        if id_to_token.len() < SPECIALS.len()
            || id_to_token.iter().zip(SPECIALS).any(|(a, b)| a != b)
        {
            return Err(Error::invalid(
                "vocabulary must begin with the reserved tokens in order",
            ));
        }
        if id_to_token.len() > max_size {
            return Err(Error::invalid(format!(
                "{} tokens exceed max_size {max_size}",
                id_to_token.len()
            )));
        }
        let mut token_to_id = HashMap::with_capacity(id_to_token.len());
        for (i, t) in id_to_token.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(Error::invalid(format!("invalid token {t:?} at id {i}")));
            }
            if token_to_id.insert(t.clone(), i as u32).is_some() {
                return Err(Error::invalid(format!("duplicate token {t:?}")));
            }
        }
        Ok(Self {
            id_to_token,
            token_to_id,
            max_size,
            min_freq,
        })
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    pub fn max_size(&self) -> usize {
        self.max_size
    }

    pub fn min_freq(&self) -> usize {
        self.min_freq
    }

    pub fn tokens(&self) -> &[String] {
        &self.id_to_token
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.id_to_token.get(id as usize).map(String::as_str)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.token_to_id.contains_key(token)
    }

    /// Unknown surface forms map to `xxunk`.
    pub fn numericalize<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<u32> {
        tokens
            .iter()
            .map(|t| self.id(t.as_ref()).unwrap_or(UNK_ID))
            .collect()
    }

    pub fn denumericalize(&self, ids: &[u32]) -> Vec<String> {
        ids.iter()
            .map(|&i| self.token(i).unwrap_or(super::UNK).to_string())
            .collect()
    }

    /// One token per line; the line number is the id.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for t in &self.id_to_token {
            s.push_str(t);
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str, max_size: usize) -> Result<Self> {
        let tokens: Vec<String> = text.lines().map(str::to_string).collect();
        let max_size = max_size.max(tokens.len());
        Self::from_tokens(tokens, max_size, 1)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_text().as_bytes())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, DEFAULT_MAX_VOCAB)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn corpus(spec: &[(&str, usize)]) -> Vec<String> {
        let mut v = Vec::new();
        for (t, n) in spec {
            for _ in 0..*n {
                v.push(t.to_string());
            }
        }
        v
    }

    fn corpus_tokens(vocab: &Vocabulary) -> Vec<&str> {
        vocab.tokens()[SPECIALS.len()..].iter().map(String::as_str).collect()
    }

    #[test]
    fn everything_fits() {
        let v = Vocabulary::build(&corpus(&[("a", 3), ("b", 1)]), 10, 1).unwrap();
        assert_eq!(corpus_tokens(&v), vec!["a", "b"]);
        assert_eq!(v.id("xxunk"), Some(0));
        assert_eq!(v.id("xxpad"), Some(1));
    }

    #[test]
    fn cap_respects_first_occurrence_ties() {
        // b appears before c in the stream, both twice.
        let toks = corpus(&[("a", 3), ("b", 2), ("c", 2), ("d", 1)]);
        let v = Vocabulary::build(&toks, SPECIALS.len() + 2, 1).unwrap();
        assert_eq!(corpus_tokens(&v), vec!["a", "b"]);

        // Interleaved stream: c first seen before b.
        let toks: Vec<&str> = vec!["c", "a", "b", "a", "b", "c", "a", "d"];
        let v = Vocabulary::build(&toks, SPECIALS.len() + 2, 1).unwrap();
        assert_eq!(corpus_tokens(&v), vec!["a", "c"]);
    }

    #[test]
    fn min_freq_floor() {
        let v = Vocabulary::build(&corpus(&[("a", 1)]), 10, 2).unwrap();
        assert_eq!(v.len(), SPECIALS.len());
    }

    #[test]
    fn rejects_tiny_cap() {
        assert!(Vocabulary::build(&corpus(&[("a", 1)]), SPECIALS.len(), 1).is_err());
        assert!(Vocabulary::build(&corpus(&[("a", 1)]), 10, 0).is_err());
    }

    #[test]
    fn specials_in_stream_not_duplicated() {
        let v = Vocabulary::build(&["xxbos", "a", "xxbos", "xxmaj"], 10, 1).unwrap();
        assert_eq!(v.len(), SPECIALS.len() + 1);
        assert_eq!(v.id("xxbos"), Some(2));
    }

    #[test]
    fn numericalize_unknown() {
        let v = Vocabulary::build(&["a"], 10, 1).unwrap();
        assert_eq!(v.numericalize(&["xxbos", "a"]), vec![2, 7]);
        assert_eq!(v.numericalize(&["zzz-not-in-vocab"]), vec![0]);
    }

    #[test]
    fn text_round_trip() {
        let v = Vocabulary::build(&["a", "b", "a"], 10, 1).unwrap();
        let back = Vocabulary::from_text(&v.to_text(), 10).unwrap();
        assert_eq!(back.tokens(), v.tokens());
    }

    /// Brute-force reference: stable sort of distinct tokens by descending count.
    fn oracle(tokens: &[String], max_size: usize, min_freq: usize) -> Vec<String> {
        let mut distinct: Vec<String> = Vec::new();
        for t in tokens {
            if !distinct.contains(t) {
                distinct.push(t.clone());
            }
        }
        let count = |t: &String| tokens.iter().filter(|x| *x == t).count();
        let mut kept: Vec<String> = distinct.into_iter().filter(|t| count(t) >= min_freq).collect();
        kept.sort_by_key(|t| std::cmp::Reverse(count(t)));
        kept.truncate(max_size - SPECIALS.len());
        kept
    }

    proptest! {
        #[test]
        fn matches_sort_oracle(
            toks in prop::collection::vec("[a-f]{1,2}", 0..200),
            extra in 1usize..20,
            min_freq in 1usize..4,
        ) {
            let max_size = SPECIALS.len() + extra;
            let v = Vocabulary::build(&toks, max_size, min_freq).unwrap();
            prop_assert!(v.len() <= max_size);
            let got: Vec<String> = corpus_tokens(&v).into_iter().map(String::from).collect();
            prop_assert_eq!(got, oracle(&toks, max_size, min_freq));
        }

        #[test]
        fn frequency_dominance(toks in prop::collection::vec("[a-h]", 1..300), extra in 1usize..6) {
            let v = Vocabulary::build(&toks, SPECIALS.len() + extra, 1).unwrap();
            let count = |t: &str| toks.iter().filter(|x| x.as_str() == t).count();
            let min_in = corpus_tokens(&v).iter().map(|t| count(t)).min().unwrap_or(usize::MAX);
            for t in &toks {
                if !v.contains(t) {
                    prop_assert!(count(t) <= min_in);
                }
            }
        }

        #[test]
        fn round_trip_in_vocab(idx in prop::collection::vec(0usize..12, 0..40)) {
            let base: Vec<String> = (0..5).map(|i| format!("w{i}")).collect();
            let v = Vocabulary::build(&base, 100, 1).unwrap();
            let seq: Vec<String> = idx.iter().map(|&i| v.tokens()[i].clone()).collect();
            prop_assert_eq!(v.denumericalize(&v.numericalize(&seq)), seq);
        }
    }
}
