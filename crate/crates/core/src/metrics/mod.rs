//! Corpus-level caption metrics computed from tokenized sentences.
//!
//! All n-gram statistics are exact integer counts kept in ordered maps, so a
//! score does not depend on corpus order or on hashing; floating point only
//! enters in the final reductions.

mod bleu;
mod cider;
mod meteor;
mod rouge;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use bleu::bleu4;
pub use cider::cider;
pub use meteor::{meteor_alignment, meteor_lite, meteor_sentence};
pub use rouge::{lcs_len, rouge_l, rouge_l_sentence};

pub type Sentence = Vec<String>;

/// Scores of one corpus, on the 0-100 reporting scale (CIDEr is also
/// multiplied by 100 and is unbounded above).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    #[serde(rename = "B4")]
    pub bleu4: f64,
    #[serde(rename = "C")]
    pub cider: f64,
    #[serde(rename = "M")]
    pub meteor: f64,
    #[serde(rename = "R")]
    pub rouge_l: f64,
    pub captions: usize,
}

impl MetricReport {
    /// Values in the order B4, C, M, R.
    pub fn values(&self) -> [f64; 4] {
        [self.bleu4, self.cider, self.meteor, self.rouge_l]
    }
}

pub(crate) fn check_corpus(candidates: &[Sentence], references: &[Vec<Sentence>]) -> Result<()> {
    if candidates.is_empty() {
        return Err(Error::Domain("empty candidate corpus".into()));
    }
    if candidates.len() != references.len() {
        return Err(Error::dim("metric corpus", &[candidates.len()], &[references.len()]));
    }
    if let Some(i) = references.iter().position(Vec::is_empty) {
        return Err(Error::Domain(format!("reference set {i} is empty")));
    }
    Ok(())
}

pub(crate) fn ngram_counts(tokens: &[String], n: usize) -> BTreeMap<&[String], usize> {
    let mut counts = BTreeMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

fn lowercase(s: &[Sentence]) -> Vec<Sentence> {
    s.iter().map(|t| t.iter().map(|w| w.to_lowercase()).collect()).collect()
}

/// BLEU-4, CIDEr, METEOR-lite and ROUGE-L of one corpus.
pub fn evaluate_corpus(candidates: &[Sentence], references: &[Vec<Sentence>]) -> Result<MetricReport> {
    check_corpus(candidates, references)?;
    let cands = lowercase(candidates);
    let refs: Vec<Vec<Sentence>> = references.iter().map(|r| lowercase(r)).collect();
    Ok(MetricReport {
        bleu4: 100.0 * bleu4(&cands, &refs)?,
        cider: 100.0 * cider(&cands, &refs)?,
        meteor: 100.0 * meteor_lite(&cands, &refs)?,
        rouge_l: 100.0 * rouge_l(&cands, &refs)?,
        captions: cands.len(),
    })
}

#[cfg(test)]
pub(crate) fn sent(s: &str) -> Sentence {
    s.split_whitespace().map(str::to_string).collect()
}
