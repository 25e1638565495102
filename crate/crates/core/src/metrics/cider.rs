use std::collections::{BTreeMap, BTreeSet};

use super::{check_corpus, ngram_counts, Sentence};
use crate::error::{Error, Result};

/// Plain CIDEr (no length penalty, no clipping): for n = 1..4 the cosine
/// similarity between tf-idf n-gram vectors of the candidate and each
/// reference, averaged over references and over n, scaled by 10 and
/// averaged over the corpus. Document frequencies come from the reference
/// sets; an n-gram absent from every reference set counts as appearing once.
pub fn cider<'a>(candidates: &'a [Sentence], references: &'a [Vec<Sentence>]) -> Result<f64> {
    check_corpus(candidates, references)?;
    if candidates.len() < 2 {
        return Err(Error::Domain("CIDEr needs a corpus of at least two videos".into()));
    }
    let n_docs = references.len() as f64;
    let mut total = 0.0;
    let mut per_video = vec![0.0; candidates.len()];
    for n in 1..=4 {
        let mut df: BTreeMap<&[String], usize> = BTreeMap::new();
        for refs in references {
            let grams: BTreeSet<&[String]> = refs.iter().flat_map(|r| ngram_counts(r, n).into_keys()).collect();
            for g in grams {
                *df.entry(g).or_insert(0) += 1;
            }
        }
        let idf = |g: &[String]| (n_docs / df.get(g).copied().unwrap_or(0).max(1) as f64).ln();
        let vector = |s: &'a [String]| -> BTreeMap<&'a [String], f64> {
            let counts = ngram_counts(s, n);
            let len: usize = counts.values().sum();
            counts
                .into_iter()
                .map(|(g, c)| (g, c as f64 / len as f64 * idf(g)))
                .collect()
        };
        for (k, (cand, refs)) in candidates.iter().zip(references).enumerate() {
            let vc = vector(cand);
            let sim: f64 = refs.iter().map(|r| cosine(&vc, &vector(r))).sum::<f64>() / refs.len() as f64;
            per_video[k] += sim / 4.0;
        }
    }
    for v in per_video {
        total += 10.0 * v;
    }
    Ok(total / candidates.len() as f64)
}

fn cosine(a: &BTreeMap<&[String], f64>, b: &BTreeMap<&[String], f64>) -> f64 {
    let norm = |m: &BTreeMap<&[String], f64>| m.values().map(|x| x * x).sum::<f64>().sqrt();
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let dot: f64 = a.iter().filter_map(|(g, x)| b.get(g).map(|y| x * y)).sum();
    dot / (na * nb)
}
