//! Greedy and beam-search captioning with an untrained decoder and with one
//! trained for a few epochs on the synthetic set.
//!
//! Run with: cargo run --release --example decode

use vnsgru::data::{generate_synthetic_dataset, Split, SyntheticSpec};
use vnsgru::decoder::{beam_decode, greedy_decode, Conditioning};
use vnsgru::training::{run_training, TrainConfig, TrainingData};
use vnsgru::{DecoderParams, ModelConfig};

fn main() -> vnsgru::Result<()> {
    let ds = generate_synthetic_dataset(&SyntheticSpec::default(), 7)?;
    let data = TrainingData::<f32>::from_dataset(&ds, 1)?;
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
        epoch_total: 12,
        epoch_sw: 12,
        batch_size: 4,
        lr: 5e-3,
        ..Default::default()
    };
    let untrained = DecoderParams::<f32>::init(model, 0)?;
    let trained = run_training(&data, model, &cfg, &mut |_, _| Ok(()))?.final_params;

    let test = ds.encode::<f32>(Split::Test, &data.vocab)?;
    for r in test.iter().take(3) {
        let cond = Conditioning {
            visual: &r.visual,
            semantic: &r.semantic,
        };
        println!("{} reference: {}", r.id, r.references[0].join(" "));
        for (name, p) in [("untrained", &untrained), ("trained", &trained)] {
            let g = data.vocab.decode(&greedy_decode(cond, p, 20)?).join(" ");
            let b = data.vocab.decode(&beam_decode(cond, p, 20, 5)?).join(" ");
            println!("  {name:>9} greedy: {g}");
            println!("  {name:>9} beam 5: {b}");
        }
    }
    Ok(())
}
