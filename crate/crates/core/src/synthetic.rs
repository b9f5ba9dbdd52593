//! A small synthetic treebank for tests and demos: hand-written tree
//! templates with one extraction site per sentence, combined over word
//! lists so that every tree is distinct.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{
    finalize_dataset, instance_from_pair, AnaphorKind, AnaphoraInstance, BuildOptions, Candidate, Label,
};
use crate::datagen::{generate_sentence, GenerationConfig, GenerationStats};
use crate::treebank::{parse_bracketed, ConstituencyTree, Span};
use crate::Result;

const ROLES: &[(&str, &str)] = &[
    ("NN", "analyst"),
    ("NN", "director"),
    ("NN", "spokesman"),
    ("NN", "chairman"),
    ("NN", "economist"),
    ("NN", "lawyer"),
    ("NN", "trader"),
];
const ADJECTIVES: &[&str] = &["senior", "former", "chief", "new", "local"];
const PLACES: &[(&str, &str)] = &[
    ("JJ", "regional"),
    ("JJ", "national"),
    ("JJ", "small"),
    ("JJ", "large"),
];
const INSTITUTIONS: &[&str] = &["bank", "firm", "agency", "union", "company", "court"];
const VERBS: &[(&str, &str)] = &[
    ("VBD", "said"),
    ("VBD", "argued"),
    ("VBD", "warned"),
    ("VBD", "noted"),
    ("VBD", "believed"),
    ("VBZ", "insists"),
];
const HEADS: &[Option<&str>] = &[None, Some("that"), Some("because"), Some("while"), Some("if")];
const THEMES: &[&str] = &["market", "economy", "dollar", "index", "price", "deficit", "budget"];
const MODALS: &[&str] = &["would", "could", "will", "might"];
const OUTCOMES: &[&str] = &["recover", "collapse", "rise", "fall", "stabilize", "improve"];
const TIMES: &[&str] = &["election", "summer", "merger", "deadline", "holidays"];

/// `(doc_id, bracketed tree)` records; five sentences per document.
pub fn synthetic_trees(n: usize) -> Vec<(String, String)> {
    (0..n)
        .map(|i| {
            let pick = |k: usize, len: usize| (i * k + i / len) % len;
            let (role_tag, role) = ROLES[pick(1, ROLES.len())];
            let adj = ADJECTIVES[pick(3, ADJECTIVES.len())];
            let (place_tag, place) = PLACES[pick(5, PLACES.len())];
            let inst = INSTITUTIONS[pick(7, INSTITUTIONS.len())];
            let (verb_tag, verb) = VERBS[pick(1, VERBS.len())];
            let head = HEADS[i % HEADS.len()];
            let theme = THEMES[pick(3, THEMES.len())];
            let modal = MODALS[pick(5, MODALS.len())];
            let outcome = OUTCOMES[pick(7, OUTCOMES.len())];
            let time = TIMES[pick(2, TIMES.len())];
            let head_leaf = head.map(|h| format!("(IN {h}) ")).unwrap_or_default();
            let tree = format!(
                "(ROOT (S (NP (NP (DT The) (JJ {adj}) ({role_tag} {role})) (PP (IN at) (NP (DT the) ({place_tag} {place}) (NN {inst})))) \
                 (VP ({verb_tag} {verb}) (SBAR {head_leaf}(S (NP (DT the) (NN {theme})) (VP (MD {modal}) (VP (VB {outcome}) \
                 (PP (IN before) (NP (DT the) (NN {time})))))))) (. .)))"
            );
            (format!("syn{:03}", i / 5), tree)
        })
        .collect()
}

/// Parsed [`synthetic_trees`].
pub fn synthetic_treebank(n: usize) -> Vec<(String, ConstituencyTree)> {
    synthetic_trees(n)
        .into_iter()
        .map(|(doc, text)| (doc, parse_bracketed(&text).expect("synthetic trees are well formed")))
        .collect()
}

/// Generates pairs from `n_trees` synthetic trees and turns them into
/// training instances with at most `max_candidates` candidates.
pub fn synthetic_instances(
    n_trees: usize,
    max_candidates: usize,
    seed: u64,
) -> Result<(Vec<AnaphoraInstance>, GenerationStats)> {
    let config = GenerationConfig {
        seed,
        ..Default::default()
    };
    let mut stats = GenerationStats::default();
    let mut instances = Vec::new();
    let mut counter = std::collections::HashMap::<String, usize>::new();
    for (doc, tree) in synthetic_treebank(n_trees) {
        let index = counter.entry(doc.clone()).or_default();
        for pair in generate_sentence(&config, &doc, *index, &tree, &mut stats) {
            instances.push(instance_from_pair(&pair, &tree)?);
        }
        *index += 1;
        stats.sentences += 1;
    }
    let opts = BuildOptions {
        training: true,
        max_candidates: Some(max_candidates),
        seed,
    };
    Ok((finalize_dataset(instances, &opts).0, stats))
}

fn words(rng: &mut ChaCha8Rng, len: usize) -> Vec<String> {
    const POOL: &[&str] = &["the", "rates", "rose", "fell", "bank", ",", "said", "that", "it", "."];
    (0..len).map(|_| POOL[rng.random_range(0..POOL.len())].to_string()).collect()
}

fn instance(id: String, kind: AnaphorKind, candidates: Vec<Candidate>, rng: &mut ChaCha8Rng) -> AnaphoraInstance {
    let mut anaphs = words(rng, 6);
    anaphs[2] = "this".into();
    AnaphoraInstance {
        id,
        kind,
        anaphs,
        anaphor_span: Span::new(2, 3),
        anaphor_head: 2,
        candidates,
        antecedents: Vec::new(),
        prev_sentence: None,
    }
}

/// Random instances with up to `max_candidates` candidates and random
/// scores drawn from a small set, so that ties are common. Half of the
/// instances carry a gold antecedent list (a candidate string with one
/// token changed); the others rely on candidate labels. Some have no
/// acceptable candidate at all.
pub fn random_scored_instances(
    n: usize,
    max_candidates: usize,
    seed: u64,
) -> (Vec<AnaphoraInstance>, Vec<Vec<f64>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut instances = Vec::with_capacity(n);
    let mut scores = Vec::with_capacity(n);
    for i in 0..n {
        let k = rng.random_range(1..=max_candidates);
        let candidates: Vec<Candidate> = (0..k)
            .map(|_| {
                let len = rng.random_range(1..6);
                Candidate {
                    tokens: words(&mut rng, len),
                    tag: ["S", "VP", "NP", "SBAR", "PP"][rng.random_range(0..5)].into(),
                    label: if rng.random_bool(0.25) { Label::Positive } else { Label::Negative },
                    first_pos: "DT".into(),
                    source_sentence_index: 0,
                }
            })
            .collect();
        let kind = if rng.random_bool(0.5) { AnaphorKind::Nominal } else { AnaphorKind::Pronominal };
        let mut inst = instance(format!("r{i}"), kind, candidates, &mut rng);
        if rng.random_bool(0.5) {
            let mut gold = inst.candidates[rng.random_range(0..k)].tokens.clone();
            let at = rng.random_range(0..gold.len());
            gold[at] = words(&mut rng, 1).remove(0);
            inst.antecedents.push(gold);
        }
        scores.push((0..k).map(|_| f64::from(rng.random_range(0..5u8)) / 4.0).collect());
        instances.push(inst);
    }
    (instances, scores)
}

/// Instances whose clausal candidates (one S, one VP) are half positive;
/// two further NP and PP candidates are negative. A uniform pick among
/// clausal tags succeeds with probability one half.
pub fn half_positive_instances(n: usize, seed: u64) -> Vec<AnaphoraInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let cand = |tag: &str, label: Label, rng: &mut ChaCha8Rng| Candidate {
                tokens: words(rng, 3),
                tag: tag.into(),
                label,
                first_pos: "DT".into(),
                source_sentence_index: 0,
            };
            let mut candidates = vec![
                cand("S", Label::Positive, &mut rng),
                cand("VP", Label::Negative, &mut rng),
                cand("NP", Label::Negative, &mut rng),
                cand("PP", Label::Negative, &mut rng),
            ];
            candidates.shuffle(&mut rng);
            instance(format!("h{i}"), AnaphorKind::Pronominal, candidates, &mut rng)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn trees_are_distinct_and_productive() {
        let trees = synthetic_trees(60);
        let distinct: HashSet<_> = trees.iter().map(|(_, t)| t).collect();
        assert_eq!(distinct.len(), 60);
        let (instances, stats) = synthetic_instances(60, 10, 7).unwrap();
        assert_eq!(stats.sites, 60);
        assert!(instances.len() >= 50, "{} instances", instances.len());
        for inst in &instances {
            assert_eq!(inst.candidates.len(), 10, "{}", inst.id);
            assert!(inst.n_positive() >= 1);
        }
    }
}
