#![allow(dead_code)]

pub mod metric_oracles;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vnsgru::cells::CellDims;
use vnsgru::data::{generate_synthetic_dataset, Dataset, SyntheticSpec};
use vnsgru::{ModelConfig, Tensor};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::vector((0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

pub fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> Tensor<f64> {
    Tensor::matrix(r, c, (0..r * c).map(|_| rng.gen_range(-scale..scale)).collect()).unwrap()
}

/// Toy sizes used by the gradient suite.
pub fn toy_config() -> ModelConfig {
    ModelConfig {
        vocab_size: 7,
        n_x: 4,
        n_h: 6,
        n_f: 3,
        n_s: 4,
        n_v: 5,
        layer_norm: true,
        ln_eps: 1e-5,
        visual_to_all_layers: true,
    }
}

pub fn toy_dims() -> CellDims {
    toy_config().layer1()
}

/// The pinned desk-scale set: 20 train / 5 validation / 5 test, seed 7.
pub fn pinned_dataset() -> Dataset {
    let spec = SyntheticSpec {
        videos: 30,
        validation: 5,
        test: 5,
        ..Default::default()
    };
    generate_synthetic_dataset(&spec, 7).unwrap()
}

pub fn sent(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

/// Row-major matrix-vector product with plain loops.
pub fn mv(m: &Tensor<f64>, x: &[f64]) -> Vec<f64> {
    let (r, c) = (m.rows(), m.cols());
    assert_eq!(c, x.len());
    (0..r)
        .map(|i| (0..c).map(|j| m.data()[i * c + j] * x[j]).sum())
        .collect()
}

/// Desk-scale decoder for the pinned synthetic set.
pub fn desk_model(vocab_size: usize, layer_norm: bool) -> ModelConfig {
    ModelConfig {
        vocab_size,
        n_x: 16,
        n_h: 32,
        n_f: 8,
        n_s: 12,
        n_v: 12,
        layer_norm,
        ln_eps: 1e-5,
        visual_to_all_layers: true,
    }
}

/// 30 epochs, batch 4, lr 5e-3, professional phase from epoch 15 with 4
/// annotations per video.
pub fn desk_train_config(seed: u64) -> vnsgru::training::TrainConfig {
    vnsgru::training::TrainConfig {
        epoch_total: 30,
        epoch_sw: 15,
        gamma: 0.8,
        schedule: vnsgru::training::Schedule::Fixed { c: 4 },
        batch_size: 4,
        lr: 5e-3,
        seed,
        track_train_loss: true,
        ..Default::default()
    }
}
