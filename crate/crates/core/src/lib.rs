//! Semantic GRU caption decoder for video captioning.
//!
//! The crate covers the whole pipeline: dense tensors with a small reverse
//! mode tape, the semantic recurrent cell with variational dropout and layer
//! normalization, a two-layer caption decoder with greedy and beam search,
//! corpus metrics (BLEU-4, METEOR, ROUGE-L, CIDEr), weighted-loss training,
//! checkpoint selection by an overall score, and the file formats used by
//! the `vnsgru` binary.

pub mod cells;
pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod decoder;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod selection;
pub mod tape;
pub mod tensor;
pub mod training;

pub use decoder::{DecoderParams, ModelConfig, TokenId, BOS, EOS, PAD, UNK};
pub use error::{Error, Result};
pub use metrics::{evaluate_corpus, MetricReport, Sentence};
pub use selection::{overall_score, SelectionConfig, SelectionState};
pub use tensor::{Real, Tensor};
