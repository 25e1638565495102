use super::{check_corpus, ngram_counts, Sentence};
use crate::error::Result;

const SMOOTHING: f64 = 1e-9;

/// Corpus BLEU-4: clipped n-gram precisions for n = 1..4, uniform geometric
/// mean and brevity penalty against the closest reference length. A zero
/// precision is replaced by 1e-9.
pub fn bleu4(candidates: &[Sentence], references: &[Vec<Sentence>]) -> Result<f64> {
    check_corpus(candidates, references)?;
    let mut clipped = [0usize; 4];
    let mut total = [0usize; 4];
    let mut cand_len = 0usize;
    let mut ref_len = 0usize;

    for (cand, refs) in candidates.iter().zip(references) {
        cand_len += cand.len();
        ref_len += closest_ref_len(cand.len(), refs);
        for n in 1..=4 {
            let counts = ngram_counts(cand, n);
            let ref_counts: Vec<_> = refs.iter().map(|r| ngram_counts(r, n)).collect();
            for (gram, &c) in &counts {
                let max_ref = ref_counts.iter().map(|rc| rc.get(gram).copied().unwrap_or(0)).max().unwrap_or(0);
                clipped[n - 1] += c.min(max_ref);
            }
            total[n - 1] += cand.len().saturating_sub(n - 1);
        }
    }

    if cand_len == 0 {
        return Ok(0.0);
    }
    let log_precision: f64 = (0..4)
        .map(|i| {
            let p = if clipped[i] == 0 {
                SMOOTHING
            } else {
                clipped[i] as f64 / total[i] as f64
            };
            0.25 * p.ln()
        })
        .sum();
    let bp = if cand_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / cand_len as f64).exp()
    };
    Ok(bp * log_precision.exp())
}

/// Reference length closest to `len`; ties go to the shorter reference.
fn closest_ref_len(len: usize, refs: &[Sentence]) -> usize {
    refs.iter()
        .map(Vec::len)
        .min_by_key(|&r| (r.abs_diff(len), r))
        .unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::sent;

    #[test]
    fn identity_is_one() {
        let c = vec![sent("a man is playing guitar")];
        let r = vec![vec![sent("a man is playing guitar")]];
        assert_eq!(bleu4(&c, &r).unwrap(), 1.0);
    }

    #[test]
    fn empty_candidate_is_zero() {
        let c = vec![vec![]];
        let r = vec![vec![sent("a man is playing guitar")]];
        assert_eq!(bleu4(&c, &r).unwrap(), 0.0);
    }

    #[test]
    fn closest_reference_prefers_shorter_on_tie() {
        let refs = vec![sent("a b c d"), sent("a b")];
        assert_eq!(closest_ref_len(3, &refs), 2);
        assert_eq!(closest_ref_len(4, &refs), 4);
    }

    #[test]
    fn rejects_bad_corpora() {
        assert!(bleu4(&[], &[]).is_err());
        assert!(bleu4(&[sent("a")], &[vec![]]).is_err());
        assert!(bleu4(&[sent("a")], &[]).is_err());
    }
}
