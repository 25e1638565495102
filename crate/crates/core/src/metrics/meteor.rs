use super::{check_corpus, Sentence};
use crate::error::Result;

const ALPHA: f64 = 0.9;
const GAMMA: f64 = 0.5;
const BETA: i32 = 3;

/// Exact-match unigram alignment of `cand` against `reference`.
///
/// Returns, for each candidate position, the aligned reference position.
/// Every candidate token is aligned while an unused identical reference
/// token remains; a token continues the previous chunk when the reference
/// position right after the previous alignment is available, otherwise it
/// takes the earliest unused match.
pub fn meteor_alignment(cand: &[String], reference: &[String]) -> Vec<Option<usize>> {
    let mut used = vec![false; reference.len()];
    let mut out: Vec<Option<usize>> = Vec::with_capacity(cand.len());
    for (i, w) in cand.iter().enumerate() {
        let continued = i
            .checked_sub(1)
            .and_then(|p| out[p])
            .map(|prev| prev + 1)
            .filter(|&j| j < reference.len() && !used[j] && &reference[j] == w);
        let pick = continued.or_else(|| (0..reference.len()).find(|&j| !used[j] && &reference[j] == w));
        if let Some(j) = pick {
            used[j] = true;
        }
        out.push(pick);
    }
    out
}

/// Sentence METEOR-lite against one reference.
fn score_one(cand: &[String], reference: &[String]) -> f64 {
    let align = meteor_alignment(cand, reference);
    let matches = align.iter().flatten().count();
    if matches == 0 {
        return 0.0;
    }
    let mut chunks = 0;
    for i in 0..align.len() {
        let Some(j) = align[i] else { continue };
        let continues = i > 0 && align[i - 1].is_some_and(|pj| pj + 1 == j);
        if !continues {
            chunks += 1;
        }
    }
    let m = matches as f64;
    let p = m / cand.len() as f64;
    let r = m / reference.len() as f64;
    let f_mean = p * r / (ALPHA * p + (1.0 - ALPHA) * r);
    let penalty = GAMMA * (chunks as f64 / m).powi(BETA);
    f_mean * (1.0 - penalty)
}

/// Sentence METEOR-lite: best over references.
pub fn meteor_sentence(cand: &[String], refs: &[Sentence]) -> f64 {
    refs.iter().map(|r| score_one(cand, r)).fold(0.0, f64::max)
}

/// Mean sentence METEOR-lite over the corpus.
pub fn meteor_lite(candidates: &[Sentence], references: &[Vec<Sentence>]) -> Result<f64> {
    check_corpus(candidates, references)?;
    let total: f64 = candidates
        .iter()
        .zip(references)
        .map(|(c, r)| meteor_sentence(c, r))
        .sum();
    Ok(total / candidates.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::sent;

    #[test]
    fn identical_five_tokens() {
        let s = sent("a man is playing guitar");
        let v = meteor_sentence(&s, &[s.clone()]);
        assert!((v - (1.0 - 0.5 / 125.0)).abs() < 1e-15, "{v}");
    }

    #[test]
    fn reversed_pair() {
        let v = meteor_sentence(&sent("b a"), &[sent("a b")]);
        assert!((v - 0.5).abs() < 1e-15, "{v}");
    }

    #[test]
    fn no_matches() {
        assert_eq!(meteor_sentence(&sent("x"), &[sent("a b")]), 0.0);
        assert_eq!(meteor_sentence(&[], &[sent("a b")]), 0.0);
    }

    #[test]
    fn alignment_prefers_chunk_continuation() {
        // the second "a" continues "a b" rather than jumping back
        let a = meteor_alignment(&sent("x a b"), &sent("a b x a b"));
        assert_eq!(a, vec![Some(2), Some(3), Some(4)]);
    }
}
