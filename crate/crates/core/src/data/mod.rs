//! Vocabulary, tokenization, dataset files and the synthetic generator.

mod dataset;
mod synthetic;
mod text;

pub use dataset::{
    features_path_for, load_dataset, write_atomic, read_caption_file, sample_annotations, write_caption_file, write_dataset, Dataset, Manifest,
    ManifestRecord, RawRecord, Split, Splits, VideoRecord,
};
pub use synthetic::{generate_synthetic_dataset, SyntheticSpec};
pub use text::{build_vocabulary, distinct_stats, tokenize, DistinctStats, Vocabulary};
