use std::collections::{HashMap, HashSet};

use aak::corpus::{
    dedup_candidates, is_punctuation, match_is_positive, read_jsonl, within_one_edit, write_jsonl, AnaphorKind,
    AnaphoraInstance, Candidate, Label, TagFrequency, Vocabulary, PAD_ID, UNK_ID,
};
use aak::treebank::Span;
use proptest::prelude::*;

/// Reachability over (i, j, general edits, punctuation deletions). A
/// punctuation token may be dropped from either side once; one further
/// substitution, insertion or deletion of any token is allowed.
fn oracle(a: &[String], b: &[String], punct_budget: usize) -> bool {
    let (n, m) = (a.len(), b.len());
    let mut reach = vec![vec![[[false; 2]; 2]; m + 1]; n + 1];
    reach[0][0][0][0] = true;
    for i in 0..=n {
        for j in 0..=m {
            for e in 0..2 {
                for p in 0..2 {
                    if !reach[i][j][e][p] {
                        continue;
                    }
                    if i < n && j < m && a[i] == b[j] {
                        reach[i + 1][j + 1][e][p] = true;
                    }
                    if e == 0 {
                        if i < n && j < m {
                            reach[i + 1][j + 1][1][p] = true;
                        }
                        if i < n {
                            reach[i + 1][j][1][p] = true;
                        }
                        if j < m {
                            reach[i][j + 1][1][p] = true;
                        }
                    }
                    if p < punct_budget {
                        if i < n && is_punctuation(&a[i]) {
                            reach[i + 1][j][e][1] = true;
                        }
                        if j < m && is_punctuation(&b[j]) {
                            reach[i][j + 1][e][1] = true;
                        }
                    }
                }
            }
        }
    }
    reach[n][m].iter().flatten().any(|&r| r)
}

fn arb_tokens() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(prop::sample::select(vec!["a", "b", "c", ",", ".", "this"]), 0..7)
        .prop_map(|v| v.into_iter().map(String::from).collect())
}

/// Pairs that are often close to each other.
fn arb_pair() -> impl Strategy<Value = (Vec<String>, Vec<String>)> {
    (arb_tokens(), prop::collection::vec((0usize..3, 0usize..8, "[abc,.]"), 0..3)).prop_map(|(a, edits)| {
        let mut b = a.clone();
        for (kind, pos, tok) in edits {
            let at = pos % (b.len() + 1);
            match kind {
                0 => b.insert(at, tok),
                1 if at < b.len() => {
                    b.remove(at);
                }
                _ if at < b.len() => b[at] = tok,
                _ => {}
            }
        }
        (a, b)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn strict_matches_edit_distance_oracle((a, b) in arb_pair()) {
        prop_assert_eq!(within_one_edit(&a, &b), oracle(&a, &b, 0));
    }

    #[test]
    fn lenient_matches_oracle((a, b) in arb_pair()) {
        prop_assert_eq!(match_is_positive(&a, &b), oracle(&a, &b, 1));
    }

    #[test]
    fn match_is_reflexive_and_symmetric((a, b) in arb_pair()) {
        prop_assert!(match_is_positive(&a, &a));
        prop_assert_eq!(match_is_positive(&a, &b), match_is_positive(&b, &a));
        prop_assert!(!within_one_edit(&a, &b) || match_is_positive(&a, &b));
    }
}

fn arb_candidate() -> impl Strategy<Value = Candidate> {
    (
        prop::collection::vec("[xyz]", 1..3),
        prop::sample::select(vec!["S", "VP", "NP", "SBAR"]),
        prop::sample::select(vec!["DT", "NN", "VB"]),
        any::<bool>(),
    )
        .prop_map(|(tokens, tag, pos, positive)| Candidate {
            tokens,
            tag: tag.to_string(),
            label: if positive { Label::Positive } else { Label::Negative },
            first_pos: pos.to_string(),
            source_sentence_index: 0,
        })
}

fn arb_instance() -> impl Strategy<Value = AnaphoraInstance> {
    (prop::collection::vec("[a-z]{1,4}", 2..8), prop::collection::vec(arb_candidate(), 1..10), any::<bool>())
        .prop_map(|(anaphs, candidates, nominal)| AnaphoraInstance {
            id: "x".into(),
            kind: if nominal { AnaphorKind::Nominal } else { AnaphorKind::Pronominal },
            anaphor_span: Span::new(0, 1),
            anaphor_head: anaphs.len() - 1,
            anaphs,
            candidates,
            antecedents: Vec::new(),
            prev_sentence: None,
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn dedup_keeps_one_most_frequent_tag_per_string(inst in arb_instance()) {
        let freq = TagFrequency::from_instances([&inst]);
        let input = inst.candidates.clone();
        let out = dedup_candidates(input.clone(), &freq).candidates;
        let strings: HashSet<_> = out.iter().map(|c| c.tokens.clone()).collect();
        prop_assert_eq!(strings.len(), out.len());
        let all: HashSet<_> = input.iter().map(|c| c.tokens.clone()).collect();
        prop_assert_eq!(strings, all);
        for kept in &out {
            prop_assert!(input.contains(kept));
            let best = input
                .iter()
                .filter(|c| c.tokens == kept.tokens)
                .map(|c| freq.count(&c.first_pos, &c.tag))
                .max()
                .unwrap();
            prop_assert_eq!(freq.count(&kept.first_pos, &kept.tag), best);
        }
    }

    #[test]
    fn jsonl_round_trip(instances in prop::collection::vec(arb_instance(), 0..5)) {
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &instances).unwrap();
        let back: Vec<AnaphoraInstance> = read_jsonl(&buf[..]).unwrap();
        prop_assert_eq!(back, instances);
    }

    #[test]
    fn vocabulary_keeps_frequent_words(instances in prop::collection::vec(arb_instance(), 1..5), min in 1usize..4) {
        let vocab = Vocabulary::build(&instances, min as f64);
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for inst in &instances {
            for w in inst.anaphs.iter().chain(inst.candidates.iter().flat_map(|c| &c.tokens)) {
                *counts.entry(w).or_default() += 1;
            }
        }
        prop_assert_eq!(vocab.word_id(aak::corpus::PAD), PAD_ID);
        for (w, n) in counts {
            let id = vocab.word_id(w);
            prop_assert_eq!(id != UNK_ID, n >= min, "{} seen {} times", w, n);
            if id != UNK_ID {
                prop_assert_eq!(vocab.word(id), w);
            }
        }
    }
}

#[test]
fn instance_json_field_names() {
    let line = r#"{"id":"d:0:1","kind":"pronominal","anaphs":["he","doubts","this","."],"anaphor_span":[2,3],"anaphor_head":2,"candidates":[{"tokens":["a","b"],"tag":"S","label":"positive"}]}"#;
    let inst: Vec<AnaphoraInstance> = read_jsonl(line.as_bytes()).unwrap();
    assert_eq!(inst[0].anaphor_span, Span::new(2, 3));
    assert!(inst[0].candidates[0].is_positive());
    inst[0].validate().unwrap();
}
