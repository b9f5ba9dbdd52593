//! Artificial anaphoric-sentence / antecedent pairs.
//!
//! The generator looks for a verb phrase with a verb and an embedded clause
//!
//! ```text
//! (VP v (SBAR [x] (S ...)))
//! ```
//!
//! cuts the `SBAR` out of the sentence and puts an anaphoric phrase in its
//! place. The `S` becomes the antecedent. Which phrases are allowed depends on
//! the clause head `x` (none, a complementizer, or an adverbial conjunction),
//! see [`RuleSet::standard`].

use std::collections::{BTreeSet, HashMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{is_punctuation, preprocess};
use crate::treebank::{ConstituencyTree, Span};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RuleType {
    Empty,
    General,
    Causal,
    Temporal,
    Conditional,
}

/// A replacement phrase.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "PhraseSpec", into = "PhraseSpec")]
pub struct PhraseTemplate {
    pub tokens: Vec<String>,
    /// Index of the anaphor head within `tokens`.
    pub head: usize,
    /// Whether the clause head is replaced along with the clause.
    pub absorb_conjunction: bool,
    pub comma_before: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum PhraseSpec {
    Text(String),
    Full {
        tokens: Vec<String>,
        head: usize,
        #[serde(default = "default_true")]
        absorb_conjunction: bool,
        #[serde(default)]
        comma_before: bool,
    },
}

fn default_true() -> bool {
    true
}

impl From<PhraseSpec> for PhraseTemplate {
    fn from(spec: PhraseSpec) -> Self {
        match spec {
            PhraseSpec::Text(text) => PhraseTemplate::parse(&text),
            PhraseSpec::Full {
                tokens,
                head,
                absorb_conjunction,
                comma_before,
            } => PhraseTemplate {
                tokens,
                head,
                absorb_conjunction,
                comma_before,
            },
        }
    }
}

impl From<PhraseTemplate> for PhraseSpec {
    fn from(t: PhraseTemplate) -> Self {
        PhraseSpec::Full {
            tokens: t.tokens,
            head: t.head,
            absorb_conjunction: t.absorb_conjunction,
            comma_before: t.comma_before,
        }
    }
}

const PRONOUNS: &[&str] = &["this", "that", "it"];

impl PhraseTemplate {
    /// Whitespace-tokenised phrase. The head is the first pronoun
    /// (`this`, `that`, `it`) or, failing that, the last token.
    pub fn parse(text: &str) -> Self {
        let tokens: Vec<String> = text.split_whitespace().map(String::from).collect();
        let head = tokens
            .iter()
            .position(|t| PRONOUNS.contains(&t.to_lowercase().as_str()))
            .unwrap_or(tokens.len().saturating_sub(1));
        PhraseTemplate {
            tokens,
            head,
            absorb_conjunction: true,
            comma_before: false,
        }
    }

    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }

    pub fn head_token(&self) -> &str {
        &self.tokens[self.head]
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubstitutionRule {
    pub rule_type: RuleType,
    /// Lowercased clause heads; the empty string stands for a missing head.
    pub trigger_heads: BTreeSet<String>,
    pub anaphoric_phrases: Vec<PhraseTemplate>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RuleSet {
    rules: Vec<SubstitutionRule>,
}

impl RuleSet {
    pub fn new(rules: Vec<SubstitutionRule>) -> Result<Self> {
        let set = RuleSet { rules };
        set.validate()?;
        Ok(set)
    }

    /// Clause heads and replacement phrases for the five anaphoric types.
    ///
    /// Ambiguous conjunctions are listed under their most frequent reading
    /// (`as` is causal, `since` temporal). The temporal heads beyond `while`
    /// and `since` are an editable extension.
    pub fn standard() -> Self {
        fn rule(rule_type: RuleType, heads: &[&str], phrases: &[&str]) -> SubstitutionRule {
            SubstitutionRule {
                rule_type,
                trigger_heads: heads.iter().map(|h| h.to_string()).collect(),
                anaphoric_phrases: phrases.iter().map(|p| PhraseTemplate::parse(p)).collect(),
            }
        }
        RuleSet {
            rules: vec![
                rule(RuleType::Empty, &[""], &["this", "that"]),
                rule(RuleType::General, &["that", "this"], &["that", "this"]),
                rule(
                    RuleType::Causal,
                    &["because", "as"],
                    &["therefore", "because of this", "because of that"],
                ),
                rule(
                    RuleType::Temporal,
                    &["while", "since", "when", "after", "before"],
                    &["during this", "during that"],
                ),
                rule(
                    RuleType::Conditional,
                    &["if", "whether"],
                    &["if this is true", "if that is true"],
                ),
            ],
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let rules: Vec<SubstitutionRule> = serde_json::from_str(text)?;
        RuleSet::new(rules)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for rule in &self.rules {
            if rule.anaphoric_phrases.is_empty() {
                return Err(Error::Config(format!("{:?} rule without phrases", rule.rule_type)));
            }
            for p in &rule.anaphoric_phrases {
                if p.tokens.is_empty() || p.head >= p.tokens.len() {
                    return Err(Error::Config(format!("bad phrase template {:?}", p.tokens)));
                }
            }
            for head in &rule.trigger_heads {
                if !seen.insert(head.as_str()) {
                    return Err(Error::Config(format!("clause head {head:?} used by two rules")));
                }
            }
        }
        Ok(())
    }

    pub fn rules(&self) -> &[SubstitutionRule] {
        &self.rules
    }

    /// The rule triggered by a (lowercased) clause head, `""` for none.
    pub fn lookup(&self, head: &str) -> Option<&SubstitutionRule> {
        self.rules.iter().find(|r| r.trigger_heads.contains(head))
    }

    /// Every token that can be an anaphor head.
    pub fn anaphor_heads(&self) -> BTreeSet<String> {
        self.rules
            .iter()
            .flat_map(|r| &r.anaphoric_phrases)
            .map(|p| p.head_token().to_lowercase())
            .collect()
    }
}

/// An occurrence of the verb / embedded-clause pattern.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PatternSite {
    pub vp_path: Vec<usize>,
    pub sbar_path: Vec<usize>,
    pub s_path: Vec<usize>,
    /// The clause head, if the `SBAR` has one.
    pub head: Option<String>,
}

impl PatternSite {
    pub fn head_key(&self) -> String {
        self.head.as_deref().map(str::to_lowercase).unwrap_or_default()
    }
}

fn is_verb(node: &ConstituencyTree) -> bool {
    node.is_leaf() && node.label().starts_with("VB")
}

/// Sites in document (pre-)order.
pub fn find_pattern_sites(tree: &ConstituencyTree) -> Vec<PatternSite> {
    let mut sites = Vec::new();
    tree.walk(&mut |path, node| {
        if node.label() != "VP" {
            return;
        }
        let Some(verb) = node.children().iter().position(is_verb) else {
            return;
        };
        for (j, sbar) in node.children().iter().enumerate().skip(verb + 1) {
            if sbar.label() != "SBAR" {
                continue;
            }
            let kids = sbar.children();
            let (head, s_index) = match kids {
                [s] if s.label() == "S" => (None, 0),
                [x, s] if x.is_leaf() && s.label() == "S" => (x.token().map(String::from), 1),
                _ => continue,
            };
            let mut sbar_path = path.to_vec();
            sbar_path.push(j);
            let mut s_path = sbar_path.clone();
            s_path.push(s_index);
            sites.push(PatternSite {
                vp_path: path.to_vec(),
                sbar_path,
                s_path,
                head,
            });
        }
    });
    sites
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratedPair {
    pub doc_id: String,
    /// Position of the source sentence within its document.
    pub sentence_index: usize,
    /// Path of the removed `SBAR` in the source tree.
    pub site_path: Vec<usize>,
    pub antecedent_tokens: Vec<String>,
    pub anaphoric_sentence_tokens: Vec<String>,
    pub anaphor_span: Span,
    pub anaphor_head_index: usize,
    pub rule_type: RuleType,
    pub rng_choice_index: usize,
}

impl GeneratedPair {
    pub fn instance_id(&self) -> String {
        let path: Vec<String> = self.site_path.iter().map(|i| i.to_string()).collect();
        format!("{}:{}:{}", self.doc_id, self.sentence_index, path.join("."))
    }

    pub fn anaphoric_phrase(&self) -> &[String] {
        &self.anaphoric_sentence_tokens[self.anaphor_span.start..self.anaphor_span.end]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectionReason {
    UnknownHead,
    TooShort,
    AntecedentLeak,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rejection {
    pub reason: RejectionReason,
    pub detail: String,
}

#[derive(Clone, Debug)]
pub struct SubstitutionOptions {
    pub min_anaphs_len: usize,
    /// Drop punctuation directly around the removed clause (sentence-final
    /// punctuation is always kept).
    pub drop_adjacent_punct: bool,
}

impl Default for SubstitutionOptions {
    fn default() -> Self {
        SubstitutionOptions {
            min_anaphs_len: 10,
            drop_adjacent_punct: false,
        }
    }
}

/// Where a substitution came from, for provenance.
#[derive(Clone, Debug, Default)]
pub struct Provenance {
    pub doc_id: String,
    pub sentence_index: usize,
}

/// Replaces the site's `SBAR` by a phrase drawn uniformly from the triggered
/// rule with a generator seeded by `rng_seed`. Output tokens are lowercased.
pub fn apply_substitution(
    tree: &ConstituencyTree,
    site: &PatternSite,
    rules: &RuleSet,
    rng_seed: u64,
    opts: &SubstitutionOptions,
    provenance: &Provenance,
) -> Result<GeneratedPair, Rejection> {
    let head = site.head_key();
    let rule = rules.lookup(&head).ok_or_else(|| Rejection {
        reason: RejectionReason::UnknownHead,
        detail: head.clone(),
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let choice = rng.random_range(0..rule.anaphoric_phrases.len());
    substitute_with_choice(tree, site, rule, choice, opts, provenance)
}

/// Deterministic core of [`apply_substitution`] with the phrase fixed.
pub fn substitute_with_choice(
    tree: &ConstituencyTree,
    site: &PatternSite,
    rule: &SubstitutionRule,
    choice: usize,
    opts: &SubstitutionOptions,
    provenance: &Provenance,
) -> Result<GeneratedPair, Rejection> {
    let sbar = tree.node_at(&site.sbar_path).expect("site from another tree");
    let s = tree.node_at(&site.s_path).expect("site from another tree");
    let phrase = &rule.anaphoric_phrases[choice];
    let tokens = preprocess(&tree.tokens());
    let (cut_start, cut_end) = (sbar.span().start, sbar.span().end);

    let mut before: Vec<String> = tokens[..cut_start].to_vec();
    let mut after: Vec<String> = tokens[cut_end..].to_vec();
    if opts.drop_adjacent_punct {
        if before.last().is_some_and(|t| is_punctuation(t)) {
            before.pop();
        }
        let final_punct = |t: &String| matches!(t.as_str(), "." | "?" | "!");
        if after.len() > 1 && is_punctuation(&after[0]) && !final_punct(&after[0]) {
            after.remove(0);
        }
    }

    let mut anaphs = before;
    if phrase.comma_before {
        anaphs.push(",".into());
    }
    if !phrase.absorb_conjunction {
        if let Some(h) = &site.head {
            anaphs.push(h.to_lowercase());
        }
    }
    let start = anaphs.len();
    anaphs.extend(phrase.tokens.iter().map(|t| t.to_lowercase()));
    let span = Span::new(start, anaphs.len());
    anaphs.extend(after);

    if anaphs.len() < opts.min_anaphs_len {
        return Err(Rejection {
            reason: RejectionReason::TooShort,
            detail: format!("{} tokens", anaphs.len()),
        });
    }
    let antecedent: Vec<String> = tokens[s.span().start..s.span().end].to_vec();
    if anaphs.windows(antecedent.len()).any(|w| w == antecedent.as_slice()) {
        return Err(Rejection {
            reason: RejectionReason::AntecedentLeak,
            detail: antecedent.join(" "),
        });
    }

    Ok(GeneratedPair {
        doc_id: provenance.doc_id.clone(),
        sentence_index: provenance.sentence_index,
        site_path: site.sbar_path.clone(),
        antecedent_tokens: antecedent,
        anaphoric_sentence_tokens: anaphs,
        anaphor_span: span,
        anaphor_head_index: span.start + phrase.head,
        rule_type: rule.rule_type,
        rng_choice_index: choice,
    })
}

/// Mixes a run seed with a document id and positions into a per-site seed,
/// so that output does not depend on the order documents are processed in.
pub fn derive_seed(seed: u64, doc_id: &str, sentence: usize, site: usize) -> u64 {
    // FNV-1a over the id, then splitmix64 finalisation of each component.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in doc_id.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut x = seed;
    for part in [h, sentence as u64, site as u64] {
        x = splitmix(x ^ part);
    }
    x
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Clone, Debug)]
pub struct GenerationConfig {
    pub seed: u64,
    pub rules: RuleSet,
    pub substitution: SubstitutionOptions,
    pub exclude_doc_ids: HashSet<String>,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            seed: 0,
            rules: RuleSet::standard(),
            substitution: SubstitutionOptions::default(),
            exclude_doc_ids: HashSet::new(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct GenerationStats {
    pub sentences: usize,
    pub excluded_sentences: usize,
    pub sites: usize,
    pub pairs: usize,
    pub rejected: HashMap<RejectionReason, usize>,
}

/// All pairs of one sentence.
pub fn generate_sentence(
    config: &GenerationConfig,
    doc_id: &str,
    sentence_index: usize,
    tree: &ConstituencyTree,
    stats: &mut GenerationStats,
) -> Vec<GeneratedPair> {
    let provenance = Provenance {
        doc_id: doc_id.to_string(),
        sentence_index,
    };
    let mut out = Vec::new();
    for (k, site) in find_pattern_sites(tree).iter().enumerate() {
        stats.sites += 1;
        let seed = derive_seed(config.seed, doc_id, sentence_index, k);
        match apply_substitution(tree, site, &config.rules, seed, &config.substitution, &provenance) {
            Ok(pair) => out.push(pair),
            Err(rej) => *stats.rejected.entry(rej.reason).or_default() += 1,
        }
    }
    stats.pairs += out.len();
    out
}

/// Streams `(doc_id, tree)` records through the generator. Sentence indices
/// count per document. Errors from the input stream or the sink abort the run.
pub fn generate_corpus<I, F>(records: I, config: &GenerationConfig, mut sink: F) -> Result<GenerationStats>
where
    I: IntoIterator<Item = Result<(String, ConstituencyTree)>>,
    F: FnMut(GeneratedPair) -> Result<()>,
{
    let mut stats = GenerationStats::default();
    let mut sentence_counter: HashMap<String, usize> = HashMap::new();
    for record in records {
        let (doc_id, tree) = record?;
        let counter = sentence_counter.entry(doc_id.clone()).or_default();
        let sentence_index = *counter;
        *counter += 1;
        stats.sentences += 1;
        if config.exclude_doc_ids.contains(&doc_id) {
            stats.excluded_sentences += 1;
            continue;
        }
        for pair in generate_sentence(config, &doc_id, sentence_index, &tree, &mut stats) {
            sink(pair)?;
        }
    }
    Ok(stats)
}
