use aak::corpus::{matches, AnaphoraInstance, MatchMode};
use aak::eval::{
    parse_table, preceding_sentence_baseline, render_table, report_from_scores, tag_baseline, EvalReport, TableRow,
    BASELINE_SEEDS,
};
use aak::synthetic::{half_positive_instances, random_scored_instances};
use proptest::prelude::*;

/// Position of candidate `i` without sorting: candidates with a higher
/// score, or an equal score and a lower index, come first.
fn brute_rank(scores: &[f64], i: usize) -> usize {
    (0..scores.len())
        .filter(|&j| scores[j] > scores[i] || (scores[j] == scores[i] && j < i))
        .count()
        + 1
}

fn brute_acceptable(inst: &AnaphoraInstance, i: usize, mode: MatchMode) -> bool {
    let c = &inst.candidates[i];
    if inst.antecedents.is_empty() {
        c.is_positive()
    } else {
        inst.antecedents.iter().any(|a| matches(&c.tokens, a, mode))
    }
}

fn brute_s_at_n(instances: &[AnaphoraInstance], scores: &[Vec<f64>], n: usize, mode: MatchMode) -> f64 {
    let hits = instances
        .iter()
        .zip(scores)
        .filter(|(inst, s)| (0..s.len()).any(|i| brute_acceptable(inst, i, mode) && brute_rank(s, i) <= n))
        .count();
    hits as f64 / instances.len() as f64
}

#[test]
fn s_at_n_matches_brute_force() {
    for seed in 0..20 {
        let (instances, scores) = random_scored_instances(200, 8, seed);
        for mode in [MatchMode::Lenient, MatchMode::Strict] {
            let report = report_from_scores(&instances, &scores, mode).unwrap();
            for n in 1..=4 {
                assert_eq!(report.overall().s[n - 1], brute_s_at_n(&instances, &scores, n, mode), "seed {seed} n {n}");
            }
        }
    }
}

fn check_report(report: &EvalReport) {
    for s in &report.subsets {
        assert!(s.s.windows(2).all(|w| w[0] <= w[1]), "{s:?}");
    }
    if let (Some(nom), Some(pro)) = (report.subset("nominal"), report.subset("pronominal")) {
        for n in 0..4 {
            let all = report.overall().s[n];
            let (lo, hi) = (nom.s[n].min(pro.s[n]), nom.s[n].max(pro.s[n]));
            assert!(lo - 1e-12 <= all && all <= hi + 1e-12);
            let weighted = (nom.s[n] * nom.instances as f64 + pro.s[n] * pro.instances as f64)
                / (nom.instances + pro.instances) as f64;
            assert!((weighted - all).abs() < 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn reports_are_monotone_and_consistent(seed in any::<u64>(), n in 1usize..30, k in 1usize..9) {
        let (instances, scores) = random_scored_instances(n, k, seed);
        check_report(&report_from_scores(&instances, &scores, MatchMode::Lenient).unwrap());
    }

    #[test]
    fn table_round_trip(rows in prop::collection::vec(
        ("[a-z(),-]{1,12}", prop::sample::select(vec!["all", "nominal", "pronominal"]),
         prop::array::uniform4(prop::option::of(0u32..=10_000))), 0..6)
    ) {
        let rows: Vec<TableRow> = rows
            .into_iter()
            .map(|(variant, subset, v)| TableRow {
                variant,
                subset: subset.into(),
                values: v.map(|x| x.map(|x| f64::from(x) / 10_000.0)),
            })
            .collect();
        prop_assert_eq!(parse_table(&render_table(&rows)).unwrap(), rows);
    }
}

#[test]
fn tag_baseline_is_reproducible_and_unbiased() {
    let instances = half_positive_instances(400, 3);
    let a = tag_baseline(&instances, &BASELINE_SEEDS, MatchMode::Lenient).unwrap();
    let b = tag_baseline(&instances, &BASELINE_SEEDS, MatchMode::Lenient).unwrap();
    assert_eq!(a.to_bits(), b.to_bits());
    // Mean of 10 x 400 Bernoulli(0.5) draws; 2.576 is the two-sided 99% z.
    let half_width = 2.576 * (0.25 / (BASELINE_SEEDS.len() * instances.len()) as f64).sqrt();
    assert!((a - 0.5).abs() <= half_width, "{a} outside 0.5 +- {half_width}");
}

#[test]
fn preceding_sentence_baseline_cases() {
    let mut instances = half_positive_instances(4, 1);
    let positive = |i: &AnaphoraInstance| i.candidates.iter().find(|c| c.is_positive()).unwrap().tokens.clone();
    instances[0].prev_sentence = Some(positive(&instances[0]));
    let mut near = positive(&instances[1]);
    near.push(".".into());
    instances[1].prev_sentence = Some(near);
    instances[2].prev_sentence = Some(vec!["unrelated".into(), "words".into(), "here".into(), "now".into()]);
    // instances[3] opens its document: no previous sentence, a miss.
    let s = preceding_sentence_baseline(&instances, MatchMode::Lenient).unwrap();
    assert_eq!(s, 0.5);
    let strict = preceding_sentence_baseline(&instances, MatchMode::Strict).unwrap();
    assert_eq!(strict, 0.5);
}
