//! Save a decoder, inspect the tensors in the file and reload it; the
//! reloaded model captions exactly like the original.
//!
//! Run with: cargo run --example checkpoint

use vnsgru::checkpoint::{load_decoder, load_tensors, save_decoder};
use vnsgru::decoder::{greedy_decode, Conditioning};
use vnsgru::{DecoderParams, ModelConfig, Tensor};

fn main() -> vnsgru::Result<()> {
    let config = ModelConfig {
        vocab_size: 20,
        n_x: 8,
        n_h: 12,
        n_f: 4,
        n_s: 6,
        n_v: 5,
        layer_norm: true,
        ln_eps: 1e-5,
        visual_to_all_layers: true,
    };
    let params = DecoderParams::<f32>::init(config, 42)?;
    let path = std::env::temp_dir().join("vnsgru-example.vnsg");
    save_decoder(&path, &params)?;
    let size = std::fs::metadata(&path).map(|m| m.len()).unwrap_or(0);
    println!("{} ({size} bytes, {} parameters)", path.display(), params.param_count());

    let named = load_tensors(&path)?;
    for (name, t) in named.iter().take(8) {
        println!("  {name:<24} {:?}", t.shape());
    }
    println!("  ... {} tensors", named.len());

    let back = load_decoder(&path)?;
    let v = Tensor::vector(vec![0.1, 0.9, 0.3, 0.0, 0.5])?;
    let s = Tensor::vector(vec![0.2, 0.2, 0.8, 0.0, 1.0, 0.4])?;
    let cond = Conditioning { visual: &v, semantic: &s };
    let a = greedy_decode(cond, &params, 10)?;
    let b = greedy_decode(cond, &back, 10)?;
    println!("greedy ids before {a:?}, after {b:?}, equal: {}", a == b);
    Ok(())
}
