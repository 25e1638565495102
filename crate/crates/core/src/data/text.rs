use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::decoder::{TokenId, BOS, EOS, PAD, UNK};
use crate::error::{Error, Result};

/// Lowercases, replaces every character that is neither alphanumeric,
/// whitespace nor an apostrophe by a space, and splits on whitespace.
/// Pieces without any alphanumeric character are dropped.
pub fn tokenize(sentence: &str) -> Vec<String> {
    let cleaned: String = sentence
        .chars()
        .flat_map(char::to_lowercase)
        .map(|c| if c.is_alphanumeric() || c.is_whitespace() || c == '\'' { c } else { ' ' })
        .collect();
    cleaned
        .split_whitespace()
        .filter(|w| w.chars().any(char::is_alphanumeric))
        .map(str::to_string)
        .collect()
}

const SPECIALS: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

/// Token/id bijection. Ids 0..4 are PAD, BOS, EOS, UNK; words follow by
/// descending training count, ties broken lexicographically.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    counts: Vec<usize>,
    index: BTreeMap<String, TokenId>,
}

impl Vocabulary {
    pub fn from_tokens(tokens: Vec<String>, counts: Vec<usize>) -> Result<Self> {
        if tokens.len() < SPECIALS.len() || tokens[..4] != SPECIALS {
            return Err(Error::Validation("vocabulary must start with the four special tokens".into()));
        }
        if counts.len() != tokens.len() {
            return Err(Error::Validation("vocabulary counts do not match tokens".into()));
        }
        let mut index = BTreeMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Validation(format!("duplicate vocabulary entry `{t}`")));
            }
        }
        Ok(Vocabulary { tokens, counts, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> TokenId {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn count(&self, id: TokenId) -> usize {
        self.counts.get(id).copied().unwrap_or(0)
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<TokenId> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    /// Words of `ids`, skipping special tokens.
    pub fn decode(&self, ids: &[TokenId]) -> Vec<String> {
        ids.iter()
            .filter(|&&i| ![PAD, BOS, EOS, UNK].contains(&i))
            .filter_map(|&i| self.token(i).map(str::to_string))
            .collect()
    }

    /// One token per line, in id order.
    pub fn to_text(&self) -> String {
        self.tokens
            .iter()
            .zip(&self.counts)
            .map(|(t, c)| format!("{t}\t{c}\n"))
            .collect()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut tokens = Vec::new();
        let mut counts = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let (tok, count) = line
                .split_once('\t')
                .ok_or_else(|| Error::Validation(format!("vocabulary line {} lacks a count", n + 1)))?;
            tokens.push(tok.to_string());
            counts.push(
                count
                    .parse()
                    .map_err(|_| Error::Validation(format!("bad count on vocabulary line {}", n + 1)))?,
            );
        }
        Self::from_tokens(tokens, counts)
    }
}

/// Builds the vocabulary of a tokenized training corpus.
pub fn build_vocabulary<'a>(corpus: impl IntoIterator<Item = &'a [String]>, min_count: usize) -> Result<Vocabulary> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    let mut sentences = 0;
    for sentence in corpus {
        sentences += 1;
        for w in sentence {
            *counts.entry(w.as_str()).or_insert(0) += 1;
        }
    }
    if sentences == 0 {
        return Err(Error::Domain("cannot build a vocabulary from an empty corpus".into()));
    }
    let mut words: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|(w, c)| *c >= min_count.max(1) && !SPECIALS.contains(w))
        .collect();
    words.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
    let mut token_counts = vec![0; SPECIALS.len()];
    for (w, c) in words {
        tokens.push(w.to_string());
        token_counts.push(c);
    }
    Vocabulary::from_tokens(tokens, token_counts)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DistinctStats {
    pub distinct_sentences: usize,
    pub vocabulary_size: usize,
}

/// Number of unique captions and unique tokens.
pub fn distinct_stats<S: AsRef<[String]>>(captions: &[S]) -> DistinctStats {
    let sentences: BTreeSet<&[String]> = captions.iter().map(AsRef::as_ref).collect();
    let words: BTreeSet<&String> = captions.iter().flat_map(|c| c.as_ref().iter()).collect();
    DistinctStats {
        distinct_sentences: sentences.len(),
        vocabulary_size: words.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        tokenize(s)
    }

    #[test]
    fn tokenize_rules() {
        assert_eq!(toks("A man is Walking."), ["a", "man", "is", "walking"]);
        assert!(toks("").is_empty());
        assert_eq!(toks("don't stop"), ["don't", "stop"]);
        assert_eq!(toks("a man,a dog"), ["a", "man", "a", "dog"]);
        assert!(toks("?! ' ...").is_empty());
    }

    #[test]
    fn vocabulary_enumeration() {
        let corpus = [toks("a b"), toks("a c")];
        let v = build_vocabulary(corpus.iter().map(Vec::as_slice), 1).unwrap();
        assert_eq!(v.len(), 3 + 4);
        assert_eq!(v.id("a"), 4);
        assert_eq!(v.id("b"), 5);
        assert_eq!(v.id("zzz"), UNK);

        let v2 = build_vocabulary(corpus.iter().map(Vec::as_slice), 2).unwrap();
        assert_eq!(v2.len(), 5);
        assert_eq!(v2.token(4), Some("a"));
    }

    #[test]
    fn vocabulary_is_order_independent() {
        let a = [toks("the dog runs"), toks("a cat sits"), toks("the cat runs")];
        let b = [a[2].clone(), a[0].clone(), a[1].clone()];
        let va = build_vocabulary(a.iter().map(Vec::as_slice), 1).unwrap();
        let vb = build_vocabulary(b.iter().map(Vec::as_slice), 1).unwrap();
        assert_eq!(va, vb);
    }

    #[test]
    fn empty_corpus_is_an_error() {
        assert!(build_vocabulary(std::iter::empty::<&[String]>(), 1).is_err());
    }

    #[test]
    fn vocabulary_text_round_trip() {
        let corpus = [toks("a b b c")];
        let v = build_vocabulary(corpus.iter().map(Vec::as_slice), 1).unwrap();
        assert_eq!(Vocabulary::from_text(&v.to_text()).unwrap(), v);
    }

    #[test]
    fn distinct_stats_counts() {
        let caps = [toks("a b"), toks("a b"), toks("b c")];
        let s = distinct_stats(&caps);
        assert_eq!((s.distinct_sentences, s.vocabulary_size), (2, 3));
        let none: [Vec<String>; 0] = [];
        assert_eq!(distinct_stats(&none).vocabulary_size, 0);
    }
}
