use aak::gradcheck::{tiny_batch, tiny_model};
use aak::model::{encode_pairs, forward, joint, score_instance, Flags, ModelConfig, PreparedCandidate};
use aak::tensor::Graph;
use proptest::prelude::*;

const PADDING_TOL: f64 = 1e-12;

fn arb_flags() -> impl Strategy<Value = Flags> {
    prop::array::uniform6(any::<bool>()).prop_map(|[ctx, aa, tag, cut, ffl1, ffl2]| Flags {
        ctx,
        aa,
        tag,
        cut,
        ffl1,
        ffl2,
    })
}

fn arb_config() -> impl Strategy<Value = ModelConfig> {
    (1usize..6, 1usize..4, 1usize..5, 1usize..6, 1usize..6, arb_flags()).prop_map(
        |(d_word, d_tag, h_lstm, h_ffl1, h_ffl2, flags)| ModelConfig {
            d_word,
            d_tag,
            h_lstm,
            h_ffl1,
            h_ffl2,
            flags,
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    /// Scoring an instance next to longer sequences, which pads its own,
    /// leaves its scores unchanged.
    #[test]
    fn padding_invariance(config in arb_config(), seed in 0u64..1_000_000) {
        let p = tiny_model(config, seed).unwrap();
        let batch = tiny_batch(&p, 2, 3, seed + 1).unwrap();
        let mut long = batch[1].clone();
        long.anaphs.extend([3, 4, 5, 6, 7, 8]);
        long.candidates[0].words.extend([9, 10, 11, 2, 3, 4, 5]);
        let alone = score_instance(&p, &batch[0]).unwrap();
        let mut g = Graph::new();
        let vars = p.bind(&mut g, false);
        let out = forward(&mut g, &p, &vars, &[&batch[0], &long], &mut None).unwrap();
        let together = &g.value(out.scores).data()[..alone.len()];
        for (a, b) in alone.iter().zip(together) {
            prop_assert!((a - b).abs() <= PADDING_TOL, "{} vs {}", a, b);
        }
    }

    /// A candidate with the words and tag of the anaphoric sentence is
    /// encoded exactly like it.
    #[test]
    fn siamese_weight_sharing(config in arb_config(), seed in 0u64..1_000_000) {
        let p = tiny_model(config, seed).unwrap();
        let mut inst = tiny_batch(&p, 1, 2, seed + 1).unwrap().remove(0);
        inst.candidates.push(PreparedCandidate {
            words: inst.anaphs.clone(),
            tag: p.s_tag_id,
            positive: false,
        });
        let pairs = encode_pairs(&p, &inst).unwrap();
        let mirror = pairs.last().unwrap();
        prop_assert_eq!(&mirror.h_c, &mirror.h_s);
        prop_assert_eq!(&mirror.h_tilde_c, &mirror.h_tilde_s);
        prop_assert!(mirror.h_cs[..mirror.h_cs.len() / 2].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn joint_is_symmetric(rows in 1usize..4, cols in 1usize..6, seed in any::<u64>()) {
        let c = aak::gradcheck::away_from_zero(&[rows, cols], 0.0, seed);
        let s = aak::gradcheck::away_from_zero(&[rows, cols], 0.0, seed ^ 1);
        let mut g = Graph::new();
        let (cv, sv) = (g.constant(c), g.constant(s));
        let a = joint(&mut g, cv, sv).unwrap();
        let b = joint(&mut g, sv, cv).unwrap();
        prop_assert_eq!(g.value(a), g.value(b));
    }

    #[test]
    fn parameter_count_matches_tensors(config in arb_config(), seed in 0u64..1000) {
        let p = tiny_model(config, seed).unwrap();
        let actual: usize = p.trainable().iter().map(|(_, t, _)| t.len()).sum();
        prop_assert_eq!(config.parameter_count(p.n_tags), actual);
        prop_assert_eq!(p.parameter_count(), actual);
    }
}

#[test]
fn scores_are_finite_and_deterministic() {
    let p = tiny_model(ModelConfig { d_word: 4, d_tag: 2, h_lstm: 3, h_ffl1: 4, h_ffl2: 5, flags: Flags::default() }, 1).unwrap();
    let inst = tiny_batch(&p, 1, 5, 2).unwrap().remove(0);
    let a = score_instance(&p, &inst).unwrap();
    assert!(a.iter().all(|v| v.is_finite()));
    assert_eq!(a, score_instance(&p, &inst).unwrap());
}

fn config(h_lstm: usize, h_ffl1: usize, h_ffl2: usize, d_tag: usize, flags: Flags) -> ModelConfig {
    ModelConfig {
        d_word: 100,
        d_tag,
        h_lstm,
        h_ffl1,
        h_ffl2,
        flags,
    }
}

/// Closed forms written out by hand for six rows of the reason-type
/// hyperparameter table, with `T` tags and 100-dimensional words. Each
/// bi-LSTM direction has `4h(in + h) + 4h` weights; the scorer has one
/// weight per input plus a bias.
#[test]
fn parameter_count_closed_forms() {
    let all = Flags::default();
    let t = 74;
    let cases = [
        (
            "full",
            config(95, 283, 1115, 49, all),
            t * 49 + 2 * (4 * 95 * (300 + 49 + 95) + 4 * 95) + ((190 + 49) * 283 + 283) + (566 * 1115 + 1115) + 1115 + 1,
        ),
        (
            "-ctx",
            config(140, 375, 1193, 83, Flags { ctx: false, ..all }),
            t * 83 + 2 * (4 * 140 * (200 + 83 + 140) + 4 * 140) + ((280 + 83) * 375 + 375) + (750 * 1193 + 1193) + 1193 + 1,
        ),
        (
            "-(tag,cut)",
            config(39, 722, 1655, 0, Flags { tag: false, cut: false, ..all }),
            2 * (4 * 39 * (300 + 39) + 4 * 39) + (78 * 722 + 722) + (1444 * 1655 + 1655) + 1655 + 1,
        ),
        (
            "-(ctx,aa,tag,cut)",
            config(38, 548, 1997, 0, Flags { ctx: false, aa: false, tag: false, cut: false, ..all }),
            2 * (4 * 38 * (100 + 38) + 4 * 38) + (76 * 548 + 548) + (1096 * 1997 + 1997) + 1997 + 1,
        ),
        (
            "-ffl1",
            config(39, 0, 956, 96, Flags { ffl1: false, ..all }),
            t * 96 + 2 * (4 * 39 * (300 + 96 + 39) + 4 * 39) + (2 * (78 + 96) * 956 + 956) + 956 + 1,
        ),
        (
            "-ffl2",
            config(71, 305, 0, 94, Flags { ffl2: false, ..all }),
            t * 94 + 2 * (4 * 71 * (300 + 94 + 71) + 4 * 71) + ((142 + 94) * 305 + 305) + 610 + 1,
        ),
    ];
    for (name, cfg, expected) in cases {
        assert_eq!(cfg.flags.variant_name(), name);
        assert_eq!(cfg.parameter_count(t), expected, "{name}");
    }
}
