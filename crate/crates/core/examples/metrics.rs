//! Corpus BLEU-4, CIDEr, METEOR-lite and ROUGE-L on a handful of captions,
//! plus the diversity statistics of the candidates.
//!
//! Run with: cargo run --example metrics

use vnsgru::data::{distinct_stats, tokenize};
use vnsgru::evaluate_corpus;
use vnsgru::metrics::meteor_sentence;

fn main() -> vnsgru::Result<()> {
    let candidates: Vec<Vec<String>> = ["A man is playing a guitar.", "a woman is slicing an onion", "a dog is running"]
        .iter()
        .map(|s| tokenize(s))
        .collect();
    let references: Vec<Vec<Vec<String>>> = [
        &["a man is playing the guitar", "a guy plays guitar on stage"][..],
        &["a woman is cutting an onion", "someone slices an onion"][..],
        &["a dog runs in the park", "the dog is running after a ball"][..],
    ]
    .iter()
    .map(|refs| refs.iter().map(|s| tokenize(s)).collect())
    .collect();

    let report = evaluate_corpus(&candidates, &references)?;
    println!("B4 {:.2}  C {:.2}  M {:.2}  R {:.2}", report.bleu4, report.cider, report.meteor, report.rouge_l);
    println!("{}", serde_json::to_string(&report).expect("report serializes"));

    let same = tokenize("a man is playing guitar");
    println!("METEOR of an identical 5-token sentence: {:.6}", meteor_sentence(&same, &[same.clone()]));

    let stats = distinct_stats(&candidates);
    println!("{} distinct captions, {} distinct words", stats.distinct_sentences, stats.vocabulary_size);
    Ok(())
}
