//! Generate a synthetic dataset, write it as manifest + feature blob, load
//! it back and build the training vocabulary.
//!
//! Run with: cargo run --example dataset_io [out_dir]

use std::path::PathBuf;

use vnsgru::data::{build_vocabulary, distinct_stats, generate_synthetic_dataset, write_dataset, Dataset, Split, SyntheticSpec};

fn main() -> vnsgru::Result<()> {
    let dir: PathBuf = std::env::args()
        .nth(1)
        .map_or_else(|| std::env::temp_dir().join("vnsgru-synthetic"), PathBuf::from);
    let spec = SyntheticSpec::default();
    let ds = generate_synthetic_dataset(&spec, 7)?;
    let manifest = write_dataset(&dir, &ds)?;
    println!("wrote {} ({} videos, n_v {}, n_s {})", manifest.display(), ds.records.len(), spec.n_v, spec.n_s);

    let back = Dataset::open(&manifest)?;
    assert_eq!(back.records, ds.records);
    for split in [Split::Train, Split::Validation, Split::Test] {
        println!("{split:?}: {} videos", back.split(split).len());
    }

    let corpus = back.tokenized(Split::Train);
    let vocab = build_vocabulary(corpus.iter().map(Vec::as_slice), 1)?;
    let stats = distinct_stats(&corpus);
    println!(
        "vocabulary {} entries; training captions: {} distinct of {}, {} words",
        vocab.len(),
        stats.distinct_sentences,
        corpus.len(),
        stats.vocabulary_size
    );
    let r = &back.records[0];
    println!("{}: {:?}", r.id, r.captions.iter().take(3).collect::<Vec<_>>());
    println!("  encoded: {:?}", vocab.encode(&corpus[0]));
    Ok(())
}
