//! Property tests over randomized inputs.

mod common;

use std::path::Path;

use common::{small_corpus, tiny_config, FnScorer};
use lencap::data::{generate_corpus, Corpus, Vocabulary, EOS};
use lencap::decoding::{decode_nar, effective, num_masks, DecodeConfig};
use lencap::metrics::{control_precision, div_n, length_histogram};
use lencap::model::{Checkpoint, ModelKind, ModelParams};
use lencap::tensor::{softmax, Tensor};
use lencap::LengthLevelPlan;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random partitions of `[1, max]` into contiguous ranges.
fn plan_strategy() -> impl Strategy<Value = LengthLevelPlan> {
    (2usize..=30, prop::collection::vec(any::<bool>(), 29)).prop_map(|(max, cuts)| {
        let mut ranges = Vec::new();
        let mut low = 1;
        for len in 1..max {
            if cuts[len - 1] {
                ranges.push((low, len));
                low = len + 1;
            }
        }
        ranges.push((low, max));
        LengthLevelPlan::custom(ranges).unwrap()
    })
}

/// Probability rows drawn from a seed and the call index.
fn random_probs(seed: u64, call: usize, rows: usize, vocab: usize) -> Tensor<f32> {
    let mut r = ChaCha8Rng::seed_from_u64(seed ^ (call as u64).wrapping_mul(0x9e37_79b9));
    let mut data = Vec::with_capacity(rows * vocab);
    for _ in 0..rows {
        let row: Vec<f32> = (0..vocab).map(|_| r.gen_range(0.0f32..1.0).powi(4)).collect();
        let s: f32 = row.iter().sum();
        data.extend(row.iter().map(|v| v / s));
    }
    Tensor::new(vec![rows, vocab], data).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_rows_are_distributions(rows in 1usize..6, cols in 1usize..10, seed in any::<u64>()) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::new(vec![rows, cols], (0..rows * cols).map(|_| r.gen_range(-30.0f64..30.0)).collect()).unwrap();
        let y = softmax(&x);
        for i in 0..rows {
            let s: f64 = y.row(i).iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
            prop_assert!(y.row(i).iter().all(|&p| (0.0..=1.0).contains(&p)));
        }
    }

    #[test]
    fn plans_partition_their_lengths(plan in plan_strategy()) {
        prop_assert_eq!(plan.bucket(0), None);
        prop_assert_eq!(plan.bucket(plan.max_length() + 1), None);
        let mut prev = 0;
        for len in 1..=plan.max_length() {
            let l = plan.assign_level(len).unwrap();
            prop_assert!(l >= prev);
            prev = l;
            let hits = plan.levels().iter().filter(|r| r.contains(len)).count();
            prop_assert_eq!(hits, 1);
            prop_assert!(plan.range(l).unwrap().contains(len));
        }
        let text = plan.to_string();
        prop_assert_eq!(text.parse::<LengthLevelPlan>().unwrap(), plan);
    }

    #[test]
    fn control_precision_ignores_order(seed in any::<u64>(), n in 1usize..40) {
        let plan = LengthLevelPlan::four_level();
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let mut decodes: Vec<(usize, usize)> = (0..n).map(|_| (r.gen_range(0..4), r.gen_range(0..30))).collect();
        let a = control_precision(&decodes, &plan).unwrap();
        decodes.reverse();
        use rand::seq::SliceRandom;
        decodes.shuffle(&mut r);
        prop_assert_eq!(a, control_precision(&decodes, &plan).unwrap());
    }

    #[test]
    fn copies_scale_div_n_down(caption in prop::collection::vec(3usize..9, 2..10), k in 1usize..5) {
        let one = div_n(std::slice::from_ref(&caption), 1).unwrap();
        let copies = vec![caption.clone(); k];
        let many = div_n(&copies, 1).unwrap();
        prop_assert!((many - one / k as f64).abs() < 1e-12);
        let two = div_n(std::slice::from_ref(&caption), 2).unwrap();
        prop_assert!(two > 0.0 && two <= 1.0);
    }

    #[test]
    fn histogram_counts_every_length(lengths in prop::collection::vec(0usize..40, 0..50)) {
        let h = length_histogram(lengths.iter().copied(), &LengthLevelPlan::four_level());
        prop_assert_eq!(h.total(), lengths.len());
        prop_assert_eq!(h.out_of_range, lengths.iter().filter(|&&l| l == 0 || l > 25).count());
    }

    #[test]
    fn effective_caption_stops_at_the_first_eos(tokens in prop::collection::vec(0usize..6, 0..12)) {
        let e = effective(&tokens);
        prop_assert!(!e.contains(&EOS));
        prop_assert_eq!(e, &tokens[..e.len()]);
        if e.len() < tokens.len() {
            prop_assert_eq!(tokens[e.len()], EOS);
        }
    }

    #[test]
    fn nar_decode_invariants(seed in any::<u64>(), level in 0usize..4, steps in 1usize..30, gamma in 0.5f32..=1.0, global in any::<bool>()) {
        let plan = LengthLevelPlan::four_level();
        let corpus = small_corpus(1, 1);
        let scorer = FnScorer::new(move |call, tokens: &[usize]| random_probs(seed, call, tokens.len(), 51));
        let config = DecodeConfig { global_update: global, ..DecodeConfig::new(steps, gamma, level) };
        let out = decode_nar(&scorer, &corpus.scenes[0].regions, &config, &plan).unwrap();
        let high = plan.range(level).unwrap().high;
        prop_assert_eq!(out.canvas.len(), high);
        prop_assert!(out.passes <= steps);
        prop_assert_eq!(out.passes, scorer.calls());
        prop_assert_eq!(out.trace.len(), out.passes);
        prop_assert!(out.caption.len() <= high);
        prop_assert_eq!(out.caption.as_slice(), effective(&out.canvas));
        for (k, step) in out.trace.iter().enumerate() {
            let expected = if k == 0 { high } else { num_masks(k + 1, steps, high) };
            prop_assert_eq!(step.masked.len(), expected);
            prop_assert!(step.confidences.iter().all(|&c| (0.0..=1.0).contains(&c)));
            prop_assert!(step.masked.windows(2).all(|w| w[0] < w[1]));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn corpus_text_round_trips(seed in any::<u64>(), n in 1usize..6) {
        let corpus = generate_corpus(seed, n, &LengthLevelPlan::four_level()).unwrap();
        let back = Corpus::from_text(&corpus.to_text(), Vocabulary::scene_grammar(), Path::new("mem")).unwrap();
        prop_assert_eq!(back, corpus);
    }

    #[test]
    fn checkpoint_bytes_round_trip(seed in any::<u64>(), ar in any::<bool>()) {
        let params = ModelParams::<f32>::init(tiny_config(51, 4), seed);
        let ckpt = Checkpoint {
            kind: if ar { ModelKind::Autoregressive } else { ModelKind::NonAutoregressive },
            plan: LengthLevelPlan::four_level(),
            vocab_hash: Vocabulary::scene_grammar().hash(),
            iteration: 7,
            params,
        };
        let bytes = ckpt.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.to_bytes(), bytes);
        prop_assert_eq!(back.params.tensors, ckpt.params.tensors);
    }
}
