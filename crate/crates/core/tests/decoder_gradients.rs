mod common;

use common::*;
use rand::Rng;
use vnsgru::cells::KeepRates;
use vnsgru::data::VideoRecord;
use vnsgru::decoder::*;
use vnsgru::gradcheck::{finite_diff_check, DEFAULT_STEP};
use vnsgru::training::{professional_gradient, SequenceJob};
use vnsgru::{Tensor, EOS};

fn inputs(seed: u64) -> (Tensor<f64>, Tensor<f64>, Vec<TokenId>) {
    let cfg = toy_config();
    let mut r = rng(seed);
    let v = rand_vec(&mut r, cfg.n_v, 0.0, 1.0);
    let s = rand_vec(&mut r, cfg.n_s, 0.0, 1.0);
    let ann = vec![r.gen_range(4..7), r.gen_range(4..7), EOS];
    (v, s, ann)
}

fn check_model(seed: u64, keep: KeepRates, cfg: ModelConfig) -> f64 {
    let params = DecoderParams::<f64>::init(cfg, seed).unwrap();
    let (v, s, ann) = inputs(seed);
    let cond = Conditioning { visual: &v, semantic: &s };
    let masks = vnsgru::training::sequence_masks::<f64>(&cfg, keep, seed).unwrap();
    let (_, grads) = loss_and_gradient(cond, &ann, &params, masks.as_ref()).unwrap();
    let analytic: Vec<f64> = grads.iter().flat_map(|g| g.data().to_vec()).collect();
    let theta = params.flatten();
    finite_diff_check(
        |t| {
            let mut p = params.clone();
            p.assign_flat(t)?;
            Ok(loss_and_gradient(cond, &ann, &p, masks.as_ref())?.0)
        },
        &theta,
        &analytic,
        DEFAULT_STEP,
    )
    .unwrap()
}

#[test]
fn full_model_gradient_with_and_without_dropout() {
    for seed in 0..6 {
        let keep = if seed % 2 == 0 { KeepRates::default() } else { KeepRates::NONE };
        let err = check_model(seed, keep, toy_config());
        assert!(err < 1e-4, "seed {seed}: {err}");
    }
}

#[test]
fn gradient_without_layer_norm_or_visual_in_layer_two() {
    let cfg = ModelConfig {
        layer_norm: false,
        visual_to_all_layers: false,
        ..toy_config()
    };
    for seed in 0..3 {
        assert!(check_model(seed, KeepRates::default(), cfg) < 1e-4);
    }
}

fn toy_record(seed: u64, annotations: Vec<Vec<TokenId>>) -> VideoRecord<f64> {
    let (v, s, _) = inputs(seed);
    VideoRecord {
        id: format!("v{seed}"),
        visual: v,
        semantic: s,
        references: vec![],
        annotations,
    }
}

#[test]
fn weighted_batch_gradient_with_constant_weights() {
    let cfg = toy_config();
    let params = DecoderParams::<f64>::init(cfg, 11).unwrap();
    let recs = [
        toy_record(1, vec![vec![4, 5, EOS], vec![6, EOS], vec![4, 4, 5, EOS]]),
        toy_record(2, vec![vec![5, EOS], vec![6, 6, EOS]]),
    ];
    let videos: Vec<Vec<SequenceJob<'_, f64>>> = vec![
        (0..3).map(|k| SequenceJob { record: &recs[0], annotation: k, mask_seed: 40 + k as u64 }).collect(),
        (0..2).map(|k| SequenceJob { record: &recs[1], annotation: k, mask_seed: 50 + k as u64 }).collect(),
    ];
    let keep = KeepRates::default();
    let res = professional_gradient(&params, &videos, 1.5, 0.6, keep, 1).unwrap();
    let batch = res.professional.unwrap();
    for g in &batch.videos {
        assert!((g.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
    let betas: Vec<Vec<f64>> = batch.videos.iter().map(|g| g.weights.clone()).collect();
    let analytic: Vec<f64> = res.grads.iter().flat_map(|g| g.data().to_vec()).collect();
    let err = finite_diff_check(
        |t| {
            let mut p = params.clone();
            p.assign_flat(t)?;
            let mut total = 0.0;
            for (jobs, b) in videos.iter().zip(&betas) {
                for (j, w) in jobs.iter().zip(b) {
                    let m = vnsgru::training::sequence_masks::<f64>(&cfg, keep, j.mask_seed)?;
                    let c = Conditioning { visual: &j.record.visual, semantic: &j.record.semantic };
                    total += w * loss_and_gradient(c, &j.record.annotations[j.annotation], &p, m.as_ref())?.0;
                }
            }
            Ok(total / videos.len() as f64)
        },
        &params.flatten(),
        &analytic,
        DEFAULT_STEP,
    )
    .unwrap();
    assert!(err < 1e-4, "{err}");
}

#[test]
fn teacher_forced_rows_are_distributions() {
    let cfg = toy_config();
    let params = DecoderParams::<f64>::init(cfg, 2).unwrap();
    let (v, s, ann) = inputs(2);
    let d = teacher_forced_forward(Conditioning { visual: &v, semantic: &s }, &ann, &params, None).unwrap();
    assert_eq!(d.len(), ann.len());
    for row in d {
        assert_eq!(row.len(), cfg.vocab_size);
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn out_of_range_token_is_a_vocabulary_error() {
    let params = DecoderParams::<f64>::init(toy_config(), 2).unwrap();
    let (v, s, _) = inputs(2);
    let r = teacher_forced_forward(Conditioning { visual: &v, semantic: &s }, &[9, EOS], &params, None);
    assert!(matches!(r, Err(vnsgru::Error::Vocabulary { id: 9, size: 7 })));
}

/// Output bias rigged so EOS always wins.
fn always_eos(cfg: ModelConfig) -> DecoderParams<f64> {
    let mut p = DecoderParams::<f64>::init(cfg, 0).unwrap();
    p.out_weight = Tensor::zeros(p.out_weight.shape());
    let mut b = vec![0.0; cfg.vocab_size];
    b[EOS] = 10.0;
    p.out_bias = Tensor::vector(b).unwrap();
    p
}

#[test]
fn rigged_eos_model_emits_empty_caption() {
    let p = always_eos(toy_config());
    let (v, s, _) = inputs(0);
    let c = Conditioning { visual: &v, semantic: &s };
    assert!(greedy_decode(c, &p, 10).unwrap().is_empty());
    assert!(beam_decode(c, &p, 10, 3).unwrap().is_empty());
}

#[test]
fn generation_never_emits_special_tokens() {
    let mut p = DecoderParams::<f64>::init(toy_config(), 4).unwrap();
    // make UNK, PAD and BOS overwhelmingly likely; they must still be skipped
    let mut b = vec![0.0; 7];
    b[PAD] = 50.0;
    b[BOS] = 50.0;
    b[UNK] = 50.0;
    p.out_bias = Tensor::vector(b).unwrap();
    for seed in 0..10 {
        let (v, s, _) = inputs(seed);
        let c = Conditioning { visual: &v, semantic: &s };
        for ids in [greedy_decode(c, &p, 8).unwrap(), beam_decode(c, &p, 8, 3).unwrap()] {
            assert!(ids.len() <= 8);
            assert!(ids.iter().all(|&t| t > UNK), "{ids:?}");
        }
    }
}

#[test]
fn beam_width_one_is_greedy() {
    for seed in 0..20 {
        let p = DecoderParams::<f64>::init(toy_config(), seed).unwrap();
        let (v, s, _) = inputs(seed);
        let c = Conditioning { visual: &v, semantic: &s };
        assert_eq!(greedy_decode(c, &p, 12).unwrap(), beam_decode(c, &p, 12, 1).unwrap());
    }
}

#[test]
fn wider_beam_scores_at_least_as_well_as_greedy_on_its_own_objective() {
    let mut wins = 0;
    for seed in 0..20 {
        let p = DecoderParams::<f64>::init(toy_config(), seed).unwrap();
        let (v, s, _) = inputs(seed);
        let c = Conditioning { visual: &v, semantic: &s };
        let g = beam_search(c, &p, 6, 1).unwrap();
        let b = beam_search(c, &p, 6, 5).unwrap();
        if b.normalized >= g.normalized - 1e-12 {
            wins += 1;
        }
    }
    assert!(wins >= 18, "{wins}/20");
}

#[test]
fn zero_beam_width_is_a_config_error() {
    let p = DecoderParams::<f64>::init(toy_config(), 0).unwrap();
    let (v, s, _) = inputs(0);
    let r = beam_decode(Conditioning { visual: &v, semantic: &s }, &p, 5, 0);
    assert!(matches!(r, Err(vnsgru::Error::Config(_))));
}

#[test]
fn feature_size_mismatch_is_rejected() {
    let p = DecoderParams::<f64>::init(toy_config(), 0).unwrap();
    let v = Tensor::<f64>::zeros(&[3]);
    let s = Tensor::<f64>::zeros(&[4]);
    assert!(greedy_decode(Conditioning { visual: &v, semantic: &s }, &p, 5).is_err());
}

#[test]
fn greedy_stops_at_max_len_without_eos() {
    let mut p = DecoderParams::<f64>::init(toy_config(), 0).unwrap();
    p.out_weight = Tensor::zeros(p.out_weight.shape());
    let mut b = vec![0.0; 7];
    b[5] = 10.0;
    p.out_bias = Tensor::vector(b).unwrap();
    let (v, s, _) = inputs(0);
    assert_eq!(greedy_decode(Conditioning { visual: &v, semantic: &s }, &p, 3).unwrap(), vec![5, 5, 5]);
}

/// Exhaustive enumeration over all captions of at most `max_len` words.
#[test]
fn beam_finds_enumerated_best_path() {
    let max_len = 3;
    for seed in 0..8 {
        let mut p = DecoderParams::<f64>::init(toy_config(), seed).unwrap();
        // sharpen the output layer so paths differ clearly
        for x in p.out_weight.data_mut() {
            *x *= 8.0;
        }
        let (v, s, _) = inputs(seed);
        let c = Conditioning { visual: &v, semantic: &s };
        let score = |toks: &[TokenId], terminated: bool| -> f64 {
            let mut ann = toks.to_vec();
            if terminated {
                ann.push(EOS);
            }
            let n = ann.len();
            let dists = teacher_forced_forward(c, &ann, &p, None).unwrap();
            let mut lp = 0.0;
            for (row, &g) in dists.iter().zip(&ann) {
                // same masking as generation
                let z: f64 = row.iter().enumerate().filter(|(i, _)| *i > UNK || *i == EOS).map(|(_, x)| x).sum();
                lp += (row[g] / z).ln();
            }
            lp / n.max(1) as f64
        };
        let words = [4usize, 5, 6];
        let mut best = f64::NEG_INFINITY;
        let mut paths: Vec<Vec<TokenId>> = vec![vec![]];
        for _ in 0..max_len {
            let mut next = vec![];
            for path in &paths {
                for &w in &words {
                    let mut q = path.clone();
                    q.push(w);
                    next.push(q);
                }
            }
            for q in &paths {
                best = best.max(score(q, true));
            }
            paths = next;
        }
        // beam stops after max_len words, so full-length paths end unterminated
        for q in &paths {
            best = best.max(score(q, false));
        }
        let wide = beam_search(c, &p, max_len, 64).unwrap();
        assert!((wide.normalized - best).abs() < 1e-9, "seed {seed}: {} vs {best}", wide.normalized);
    }
}
