//! Brute-force metric oracles shared by the metric tests and the acceptance run.

use super::sent;

pub type S = Vec<String>;

pub fn grams(s: &[String], n: usize) -> Vec<Vec<String>> {
    if s.len() < n {
        return vec![];
    }
    (0..=s.len() - n).map(|i| s[i..i + n].to_vec()).collect()
}

pub fn count(xs: &[Vec<String>], g: &[String]) -> usize {
    xs.iter().filter(|x| x.as_slice() == g).count()
}

pub fn bleu_oracle(c: &[S], r: &[Vec<S>]) -> f64 {
    let mut lp = 0.0;
    for n in 1..=4 {
        let (mut hit, mut tot) = (0usize, 0usize);
        for (cand, refs) in c.iter().zip(r) {
            let cg = grams(cand, n);
            tot += cg.len();
            let mut seen: Vec<Vec<String>> = vec![];
            for g in &cg {
                if seen.contains(g) {
                    continue;
                }
                seen.push(g.clone());
                let mx = refs.iter().map(|rf| count(&grams(rf, n), g)).max().unwrap();
                hit += count(&cg, g).min(mx);
            }
        }
        let p = if hit == 0 { 1e-9 } else { hit as f64 / tot as f64 };
        lp += p.ln() / 4.0;
    }
    let clen: usize = c.iter().map(Vec::len).sum();
    let mut rlen = 0usize;
    for (cand, refs) in c.iter().zip(r) {
        let mut best = refs[0].len();
        for rf in refs {
            let (d, bd) = (rf.len().abs_diff(cand.len()), best.abs_diff(cand.len()));
            if d < bd || (d == bd && rf.len() < best) {
                best = rf.len();
            }
        }
        rlen += best;
    }
    let bp = if clen > rlen { 1.0 } else { (1.0 - rlen as f64 / clen as f64).exp() };
    bp * lp.exp()
}

/// LCS by exhaustive recursion.
pub fn lcs_oracle(a: &[String], b: &[String]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    if a[0] == b[0] {
        1 + lcs_oracle(&a[1..], &b[1..])
    } else {
        lcs_oracle(&a[1..], b).max(lcs_oracle(a, &b[1..]))
    }
}

pub fn rouge_oracle(c: &[S], r: &[Vec<S>]) -> f64 {
    let mut tot = 0.0;
    for (cand, refs) in c.iter().zip(r) {
        let mut best = 0.0f64;
        for rf in refs {
            let l = lcs_oracle(cand, rf) as f64;
            if l == 0.0 {
                continue;
            }
            let (p, rc) = (l / cand.len() as f64, l / rf.len() as f64);
            let b2 = 1.44;
            best = best.max((1.0 + b2) * p * rc / (rc + b2 * p));
        }
        tot += best;
    }
    tot / c.len() as f64
}

pub fn cider_oracle(c: &[S], r: &[Vec<S>]) -> f64 {
    let nd = r.len() as f64;
    let mut score = 0.0;
    for (k, (cand, refs)) in c.iter().zip(r).enumerate() {
        let _ = k;
        let mut per_n = 0.0;
        for n in 1..=4 {
            let df = |g: &[String]| {
                r.iter()
                    .filter(|set| set.iter().any(|rf| count(&grams(rf, n), g) > 0))
                    .count()
                    .max(1) as f64
            };
            let vec_of = |s: &S| -> Vec<(Vec<String>, f64)> {
                let gs = grams(s, n);
                let mut uniq: Vec<Vec<String>> = vec![];
                for g in &gs {
                    if !uniq.contains(g) {
                        uniq.push(g.clone());
                    }
                }
                uniq.into_iter()
                    .map(|g| {
                        let tf = count(&gs, &g) as f64 / gs.len() as f64;
                        let w = tf * (nd / df(&g)).ln();
                        (g, w)
                    })
                    .collect()
            };
            let cv = vec_of(cand);
            let mut sim = 0.0;
            for rf in refs {
                let rv = vec_of(rf);
                let dot: f64 = cv
                    .iter()
                    .map(|(g, w)| rv.iter().find(|(h, _)| h == g).map_or(0.0, |(_, x)| w * x))
                    .sum();
                let na = cv.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
                let nb = rv.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
                if na > 0.0 && nb > 0.0 {
                    sim += dot / (na * nb);
                }
            }
            per_n += sim / refs.len() as f64;
        }
        score += 10.0 * per_n / 4.0;
    }
    score / c.len() as f64
}

/// The frozen toy corpus: five candidates with two references each.
pub fn frozen_corpus() -> (Vec<S>, Vec<Vec<S>>) {
    let c = vec![
        sent("a man is playing a guitar"),
        sent("a woman is slicing an onion"),
        sent("the dog is running"),
        sent("a cat drinks milk from a bowl"),
        sent("a boy rides a bike on the road"),
    ];
    let r = vec![
        vec![sent("a man is playing the guitar"), sent("a guy plays guitar on stage")],
        vec![sent("a woman is cutting an onion"), sent("someone slices an onion in the kitchen")],
        vec![sent("a dog is running in the park"), sent("the dog runs after a ball")],
        vec![sent("a cat is drinking milk"), sent("the kitten laps milk from a bowl")],
        vec![sent("a boy is riding a bicycle"), sent("a child rides a bike down the road")],
    ];
    (c, r)
}

