//! Two-phase training on the synthetic set: teacher forcing first, then the
//! professional phase with loss- and length-weighted annotations. The
//! champion is kept by comprehensive selection and written to disk.
//!
//! Run with: cargo run --release --example train_synthetic [out_dir]

use std::path::PathBuf;

use vnsgru::checkpoint::save_decoder;
use vnsgru::data::{generate_synthetic_dataset, Split, SyntheticSpec};
use vnsgru::selection::Decision;
use vnsgru::training::{caption_records, run_training, Schedule, TrainConfig, TrainingData};
use vnsgru::{evaluate_corpus, ModelConfig};

fn main() -> vnsgru::Result<()> {
    let out: PathBuf = std::env::args().nth(1).map_or_else(std::env::temp_dir, PathBuf::from);
    std::fs::create_dir_all(&out).map_err(|e| vnsgru::Error::Io { path: out.clone(), source: e })?;

    let ds = generate_synthetic_dataset(&SyntheticSpec::default(), 7)?;
    let data = TrainingData::<f32>::from_dataset(&ds, 1)?;
    println!("vocabulary {} words, mean caption length {:.2}", data.vocab.len(), data.mean_len());

    let model = ModelConfig {
        vocab_size: data.vocab.len(),
        n_x: 16,
        n_h: 32,
        n_f: 8,
        n_s: ds.manifest.n_s,
        n_v: ds.manifest.n_v,
        layer_norm: true,
        ln_eps: 1e-5,
        visual_to_all_layers: true,
    };
    let cfg = TrainConfig {
        epoch_total: 30,
        epoch_sw: 15,
        gamma: 0.8,
        schedule: Schedule::Fixed { c: 4 },
        batch_size: 4,
        lr: 5e-3,
        seed: 1,
        ..Default::default()
    };
    let champion_path = out.join("champion.vnsg");
    let outcome = run_training(&data, model, &cfg, &mut |rec, params| {
        println!("{}", rec.log_line());
        if rec.decision == Decision::SaveChampion {
            save_decoder(&champion_path, params)?;
        }
        Ok(())
    })?;
    println!("champion epoch {:?} -> {}", outcome.selection.champion_epoch(), champion_path.display());

    let champion = outcome.champion.as_ref().expect("at least one epoch was saved");
    let test = ds.encode::<f32>(Split::Test, &data.vocab)?;
    let captions = caption_records(champion, &test, &data.vocab, cfg.max_caption_len, 1, 1)?;
    let refs: Vec<_> = test.iter().map(|r| r.references.clone()).collect();
    let report = evaluate_corpus(&captions, &refs)?;
    println!("test B4 {:.1} C {:.1} M {:.1} R {:.1}", report.bleu4, report.cider, report.meteor, report.rouge_l);
    for (r, c) in test.iter().zip(&captions) {
        println!("  {}\t{}", r.id, c.join(" "));
    }
    Ok(())
}
