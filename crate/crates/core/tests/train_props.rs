use std::collections::BTreeSet;

use aak::corpus::Vocabulary;
use aak::glove::embedding_matrix;
use aak::gradcheck::{tiny_batch, tiny_model};
use aak::model::{Model, ModelConfig, PreparedInstance};
use aak::synthetic::synthetic_instances;
use aak::tensor::{Graph, Tensor};
use aak::train::{fit, global_norm, global_norm_clip, make_batches, margin_loss, margin_loss_graph, TrainConfig};
use proptest::prelude::*;

/// Scores on a grid of eighths, so that the hinge boundary is hit exactly.
fn arb_scores(max: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec((-16i32..16).prop_map(|v| f64::from(v) / 8.0), 1..max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn margin_is_zero_exactly_when_separated(pos in arb_scores(5), neg in arb_scores(8)) {
        let best_pos = pos.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let best_neg = neg.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let loss = margin_loss(&pos, &neg).unwrap();
        prop_assert_eq!(loss == 0.0, best_pos >= 1.0 + best_neg);
        // max over negatives of min over positives of the pairwise hinge
        let pairwise = neg
            .iter()
            .map(|n| pos.iter().map(|p| (1.0 + n - p).max(0.0)).fold(f64::INFINITY, f64::min))
            .fold(0.0, f64::max);
        prop_assert_eq!(loss, pairwise);
    }

    #[test]
    fn graph_loss_sums_instance_losses(seed in 0u64..10_000, n in 1usize..4, k in 2usize..6) {
        let p = tiny_model(ModelConfig { d_word: 2, d_tag: 1, h_lstm: 1, h_ffl1: 1, h_ffl2: 1, ..Default::default() }, 1).unwrap();
        let batch = tiny_batch(&p, n, k, seed).unwrap();
        let refs: Vec<&PreparedInstance> = batch.iter().collect();
        let scores = aak::gradcheck::away_from_zero(&[n * k, 1], 0.0, seed);
        let ranges: Vec<_> = (0..n).map(|i| i * k..(i + 1) * k).collect();
        let mut g = Graph::new();
        let sv = g.constant(scores.clone());
        let total = margin_loss_graph(&mut g, sv, &refs, &ranges).unwrap();
        let expected: f64 = batch
            .iter()
            .zip(&ranges)
            .map(|(inst, r)| {
                let s = &scores.data()[r.clone()];
                let pos: Vec<f64> = inst.positives().iter().map(|&i| s[i]).collect();
                let neg: Vec<f64> = inst.negatives().iter().map(|&i| s[i]).collect();
                margin_loss(&pos, &neg).unwrap()
            })
            .sum();
        prop_assert!((g.value(total).item() - expected).abs() < 1e-12);
    }

    #[test]
    fn batches_partition_by_signature(
        sigs in prop::collection::vec((1usize..3, 0usize..3), 0..60),
        max in 1usize..8,
        seed in any::<u64>(),
        shuffle in any::<bool>(),
    ) {
        let batches = make_batches(&sigs, max, seed, shuffle);
        prop_assert_eq!(&batches, &make_batches(&sigs, max, seed, shuffle));
        let mut seen = BTreeSet::new();
        for b in &batches {
            prop_assert!(!b.is_empty() && b.len() <= max);
            prop_assert!(b.iter().all(|&i| sigs[i] == sigs[b[0]]));
            prop_assert!(b.windows(2).all(|w| w[0] < w[1]));
            for &i in b {
                prop_assert!(seen.insert(i));
            }
        }
        prop_assert_eq!(seen.len(), sigs.len());
        // Within one signature, all batches but the last are full.
        let distinct: BTreeSet<_> = sigs.iter().collect();
        let expected: usize = distinct
            .iter()
            .map(|s| sigs.iter().filter(|x| x == s).count().div_ceil(max))
            .sum();
        prop_assert_eq!(batches.len(), expected);
    }

    #[test]
    fn clipping_bounds_norm_and_keeps_direction(
        vals in prop::collection::vec(-10.0f64..10.0, 1..20),
        split in 0usize..20,
        max in 0.1f64..5.0,
    ) {
        let cut = split.min(vals.len());
        let mut grads = vec![Tensor::vector(vals[..cut].to_vec()), Tensor::vector(vals[cut..].to_vec())];
        let before = grads.clone();
        let norm = global_norm_clip(&mut grads, max);
        prop_assert!((norm - global_norm(&before)).abs() < 1e-12);
        let after = global_norm(&grads);
        if norm <= max {
            prop_assert_eq!(&grads, &before);
        } else {
            prop_assert!((after - max).abs() < 1e-9);
            let f = max / norm;
            for (a, b) in grads.iter().zip(&before) {
                for (x, y) in a.data().iter().zip(b.data()) {
                    prop_assert!((x - y * f).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn training_is_deterministic() {
    let (instances, _) = synthetic_instances(10, 6, 1).unwrap();
    let vocab = Vocabulary::build(&instances, 1.0);
    let config = ModelConfig { d_word: 4, d_tag: 2, h_lstm: 3, h_ffl1: 4, h_ffl2: 4, ..Default::default() };
    let run = || {
        let (emb, _) = embedding_matrix(&vocab, None, 4, 5);
        let model = Model::new(config, vocab.clone(), emb, 5).unwrap();
        let cfg = TrainConfig { epochs: 3, seed: 9, ..Default::default() };
        fit(model, &instances, &instances, &cfg, |_| {}).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.best.params, b.best.params);
    assert_eq!(a.best_epoch, b.best_epoch);
    let losses = |r: &aak::train::FitResult| r.log.iter().map(|l| (l.train_loss, l.dev_s1)).collect::<Vec<_>>();
    assert_eq!(losses(&a), losses(&b));
}
