mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vnsgru::checkpoint::{decode_tensors, decoder_from_tensors, decoder_tensors, encode_tensors};
use vnsgru::data::{build_vocabulary, sample_annotations, tokenize};
use vnsgru::selection::{MetricKind, SelectionConfig, SelectionState};
use vnsgru::tensor::{layer_norm, softmax};
use vnsgru::training::{clip_global_norm, professional_weights};
use vnsgru::{DecoderParams, ModelConfig, Tensor};

fn finite_vec(n: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-20.0f64..20.0, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn softmax_is_a_distribution(x in finite_vec(1..30)) {
        let p = softmax(&x).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn softmax_is_shift_invariant(x in finite_vec(1..20), c in -50.0f64..50.0) {
        let a = softmax(&x).unwrap();
        let b = softmax(&x.iter().map(|v| v + c).collect::<Vec<_>>()).unwrap();
        for (p, q) in a.iter().zip(&b) {
            prop_assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_norm_standardizes(x in finite_vec(2..24)) {
        let spread = x.iter().cloned().fold(f64::MIN, f64::max) - x.iter().cloned().fold(f64::MAX, f64::min);
        prop_assume!(spread > 1e-2);
        let n = x.len();
        let mx = x.iter().sum::<f64>() / n as f64;
        let vx = x.iter().map(|v| (v - mx) * (v - mx)).sum::<f64>() / n as f64;
        let y = layer_norm(&Tensor::vector(x).unwrap(), &Tensor::filled(&[n], 1.0), &Tensor::zeros(&[n]), 1e-5).unwrap();
        let mean = y.data().iter().sum::<f64>() / n as f64;
        let var = y.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        prop_assert!(mean.abs() < 1e-9);
        prop_assert!((var - vx / (vx + 1e-5)).abs() < 1e-9);
    }

    #[test]
    fn professional_weights_sum_to_one(
        l in prop::collection::vec(0.0f64..10.0, 1..12),
        gamma in 0.0f64..=1.0,
        mean_len in 1.0f64..20.0,
        seed in any::<u64>(),
    ) {
        use rand::Rng;
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let lens: Vec<f64> = l.iter().map(|_| r.gen_range(1..20) as f64).collect();
        let b = professional_weights(&l, &lens, mean_len, gamma).unwrap();
        prop_assert!((b.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(b.iter().all(|&x| x > 0.0 && x <= 1.0));
    }

    #[test]
    fn equal_lengths_order_weights_by_loss(l in prop::collection::vec(0.0f64..10.0, 2..10), gamma in 0.01f64..=1.0) {
        let lens = vec![7.0; l.len()];
        let b = professional_weights(&l, &lens, 6.0, gamma).unwrap();
        for i in 0..l.len() {
            for j in 0..l.len() {
                if l[i] < l[j] - 1e-9 {
                    prop_assert!(b[i] > b[j]);
                }
            }
        }
    }

    #[test]
    fn clipping_preserves_direction(g in finite_vec(1..40), max in 0.1f64..50.0) {
        let before = Tensor::vector(g.clone()).unwrap();
        let mut grads = vec![before.clone()];
        let n0 = clip_global_norm(&mut grads, max).unwrap();
        let n1 = grads[0].norm_sq().sqrt();
        prop_assert!((n1 - n0.min(max)).abs() < 1e-9);
        if n0 > 0.0 {
            let cos = before.dot(&grads[0]).unwrap() / (n0 * n1);
            prop_assert!((cos - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn bests_track_running_maxima(values in prop::collection::vec(prop::collection::vec(0.1f64..100.0, 4), 1..15)) {
        let mut s = SelectionState::new(SelectionConfig::default()).unwrap();
        for (e, v) in values.iter().enumerate() {
            s.observe(v, e).unwrap();
            for i in 0..4 {
                let m = values[..=e].iter().map(|r| r[i]).fold(f64::MIN, f64::max);
                prop_assert_eq!(s.bests[i], Some(m));
            }
            // after each epoch the champion scores at least as well as that epoch
            let bests: Vec<f64> = s.bests.iter().map(|b| b.unwrap()).collect();
            let champ = s.champion.as_ref().unwrap();
            let o_c = vnsgru::overall_score(&champ.values, &bests, &[0.25; 4]).unwrap();
            prop_assert!(o_c >= vnsgru::overall_score(v, &bests, &[0.25; 4]).unwrap() - 1e-12);
        }
    }

    #[test]
    fn single_metric_champion_is_first_argmax(values in prop::collection::vec(0.0f64..50.0, 1..20)) {
        let mut s = SelectionState::new(SelectionConfig::single(MetricKind::Cider)).unwrap();
        for (e, v) in values.iter().enumerate() {
            s.observe(&[*v], e).unwrap();
        }
        let best = values.iter().cloned().fold(f64::MIN, f64::max);
        let first = values.iter().position(|&v| v == best).unwrap();
        prop_assert_eq!(s.champion_epoch(), Some(first));
    }

    #[test]
    fn tokens_are_lowercase_words(text in "[A-Za-z ,.!?']{0,60}") {
        for t in tokenize(&text) {
            prop_assert!(!t.is_empty());
            prop_assert!(t.chars().any(|c| c.is_alphanumeric()));
            prop_assert_eq!(t.clone(), t.to_lowercase());
        }
    }

    #[test]
    fn encoded_ids_are_in_range(corpus in prop::collection::vec("[a-e ]{1,20}", 1..8), probe in "[a-h ]{0,20}") {
        let toks: Vec<Vec<String>> = corpus.iter().map(|s| tokenize(s)).collect();
        prop_assume!(toks.iter().any(|t| !t.is_empty()));
        let v = build_vocabulary(toks.iter().map(Vec::as_slice), 1).unwrap();
        for id in v.encode(&tokenize(&probe)) {
            prop_assert!(id < v.len());
        }
    }

    #[test]
    fn vocabulary_ignores_corpus_order(corpus in prop::collection::vec("[a-f ]{1,16}", 1..8), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let mut toks: Vec<Vec<String>> = corpus.iter().map(|s| tokenize(s)).collect();
        prop_assume!(toks.iter().any(|t| !t.is_empty()));
        let a = build_vocabulary(toks.iter().map(Vec::as_slice), 1).unwrap();
        toks.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let b = build_vocabulary(toks.iter().map(Vec::as_slice), 1).unwrap();
        prop_assert_eq!(a.tokens(), b.tokens());
    }

    #[test]
    fn sampling_uses_every_annotation_before_repeating(available in 1usize..20, n in 1usize..40, seed in any::<u64>()) {
        let picks = sample_annotations(available, n, &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(picks.len(), n);
        prop_assert!(picks.iter().all(|&k| k < available));
        let distinct: std::collections::BTreeSet<_> = picks.iter().collect();
        prop_assert_eq!(distinct.len(), n.min(available));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn checkpoint_roundtrip_is_bit_exact(seed in any::<u64>(), v in 5usize..12, n_h in 2usize..9, ln in any::<bool>()) {
        let cfg = ModelConfig { vocab_size: v, n_x: 3, n_h, n_f: 2, n_s: 4, n_v: 3, layer_norm: ln, ln_eps: 1e-5, visual_to_all_layers: !ln };
        let p = DecoderParams::<f32>::init(cfg, seed).unwrap();
        let bytes = encode_tensors(&decoder_tensors(&p));
        let back = decoder_from_tensors(decode_tensors(&bytes, "mem").unwrap(), "mem").unwrap();
        prop_assert_eq!(encode_tensors(&decoder_tensors(&back)), bytes);
        prop_assert_eq!(back.config.layer_norm, ln);
    }

    #[test]
    fn any_truncation_is_a_format_error(cut in 0usize..2000) {
        let p = DecoderParams::<f32>::init(common::toy_config(), 1).unwrap();
        let bytes = encode_tensors(&decoder_tensors(&p));
        let cut = cut % bytes.len();
        let is_format_error = matches!(decode_tensors(&bytes[..cut], "mem"), Err(vnsgru::Error::Format { .. }));
        prop_assert!(is_format_error);
    }
}
