//! Ranking instances: candidate extraction, labeling, de-duplication,
//! vocabulary and dataset statistics.

use std::collections::{BTreeSet, HashMap};
use std::io::{BufRead, Write};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::{derive_seed, GeneratedPair};
use crate::treebank::{enumerate_constituents, parse_bracketed, ConstituencyTree, Span};
use crate::{Error, Result};

const PUNCTUATION: &str = ".,;:!?'\"`-()[]";

/// A token made only of punctuation characters.
pub fn is_punctuation(token: &str) -> bool {
    !token.is_empty() && token.chars().all(|c| PUNCTUATION.contains(c))
}

/// Lowercases every token. `str::to_lowercase` follows the Unicode tables
/// and is independent of the process locale.
pub fn preprocess(tokens: &[String]) -> Vec<String> {
    tokens.iter().map(|t| t.to_lowercase()).collect()
}

/// Which candidate variants count as matching an antecedent.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchMode {
    /// Identical, one token edit, or one token edit plus one punctuation token.
    #[default]
    Lenient,
    /// Identical or one token edit.
    Strict,
}

/// Token-level edit distance of at most one (substitution, insertion or deletion).
pub fn within_one_edit<S: AsRef<str>>(a: &[S], b: &[S]) -> bool {
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    if long.len() - short.len() > 1 {
        return false;
    }
    let prefix = short
        .iter()
        .zip(long)
        .take_while(|(x, y)| x.as_ref() == y.as_ref())
        .count();
    if prefix == short.len() {
        return true;
    }
    let skip = if short.len() == long.len() { 1 } else { 0 };
    short[prefix + skip..]
        .iter()
        .zip(&long[prefix + 1..])
        .all(|(x, y)| x.as_ref() == y.as_ref())
}

fn without<S: AsRef<str>>(tokens: &[S], idx: usize) -> Vec<&str> {
    tokens
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != idx)
        .map(|(_, t)| t.as_ref())
        .collect()
}

/// True iff the candidate equals the antecedent, differs from it in one
/// token, or differs in one token plus one punctuation token.
pub fn match_is_positive<S: AsRef<str>>(candidate: &[S], antecedent: &[S]) -> bool {
    if within_one_edit(candidate, antecedent) {
        return true;
    }
    let (la, lb) = (candidate.len(), antecedent.len());
    if la.abs_diff(lb) > 2 {
        return false;
    }
    for (i, tok) in candidate.iter().enumerate() {
        if is_punctuation(tok.as_ref()) && within_one_edit(&without(candidate, i), &as_strs(antecedent)) {
            return true;
        }
    }
    for (i, tok) in antecedent.iter().enumerate() {
        if is_punctuation(tok.as_ref()) && within_one_edit(&as_strs(candidate), &without(antecedent, i)) {
            return true;
        }
    }
    false
}

fn as_strs<S: AsRef<str>>(tokens: &[S]) -> Vec<&str> {
    tokens.iter().map(|t| t.as_ref()).collect()
}

pub fn matches<S: AsRef<str>>(candidate: &[S], antecedent: &[S], mode: MatchMode) -> bool {
    match mode {
        MatchMode::Lenient => match_is_positive(candidate, antecedent),
        MatchMode::Strict => within_one_edit(candidate, antecedent),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Positive,
    Negative,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnaphorKind {
    Pronominal,
    Nominal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub tokens: Vec<String>,
    pub tag: String,
    pub label: Label,
    /// Tag of the first word, used to resolve duplicate strings.
    #[serde(default)]
    pub first_pos: String,
    #[serde(default)]
    pub source_sentence_index: usize,
}

impl Candidate {
    pub fn is_positive(&self) -> bool {
        self.label == Label::Positive
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnaphoraInstance {
    pub id: String,
    pub kind: AnaphorKind,
    pub anaphs: Vec<String>,
    pub anaphor_span: Span,
    pub anaphor_head: usize,
    pub candidates: Vec<Candidate>,
    /// Gold antecedents; when absent, candidate labels are authoritative.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub antecedents: Vec<Vec<String>>,
    /// Sentence preceding the anaphoric sentence, if known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prev_sentence: Option<Vec<String>>,
}

impl AnaphoraInstance {
    pub fn n_positive(&self) -> usize {
        self.candidates.iter().filter(|c| c.is_positive()).count()
    }

    pub fn n_negative(&self) -> usize {
        self.candidates.len() - self.n_positive()
    }

    /// `(n_pos, n_neg)`, the batching key.
    pub fn signature(&self) -> (usize, usize) {
        (self.n_positive(), self.n_negative())
    }

    pub fn is_degenerate(&self) -> bool {
        self.n_positive() == 0
    }

    /// Checks the structural invariants of the type.
    pub fn validate(&self) -> Result<()> {
        let n = self.anaphs.len();
        if self.anaphor_span.is_empty() || self.anaphor_span.end > n {
            return Err(Error::contract(format!(
                "{}: anaphor span {} outside sentence of {n} tokens",
                self.id, self.anaphor_span
            )));
        }
        if self.anaphor_head >= n {
            return Err(Error::contract(format!("{}: anaphor head out of range", self.id)));
        }
        for c in &self.candidates {
            if c.tokens.is_empty() || c.tag.is_empty() {
                return Err(Error::contract(format!("{}: empty candidate", self.id)));
            }
        }
        Ok(())
    }
}

/// The anaphor side of an instance.
#[derive(Clone, Debug)]
pub struct AnaphorMention {
    pub id: String,
    pub kind: AnaphorKind,
    pub anaphs: Vec<String>,
    pub anaphor_span: Span,
    pub anaphor_head: usize,
    pub prev_sentence: Option<Vec<String>>,
}

fn contains_run<S: AsRef<str>, T: AsRef<str>>(haystack: &[S], needle: &[T]) -> bool {
    if needle.is_empty() {
        return true;
    }
    haystack
        .windows(needle.len())
        .any(|w| w.iter().zip(needle).all(|(a, b)| a.as_ref() == b.as_ref()))
}

/// Extracts all constituents of the antecedent-bearing sentences and labels
/// them against the antecedents.
///
/// Tokens are lowercased. Candidates identical in both string and tag are
/// collapsed; candidates sharing a string under different tags are left for
/// [`dedup_candidates`], which needs dataset-wide tag counts.
pub fn build_instance(
    mention: AnaphorMention,
    antecedents: &[Vec<String>],
    sentences: &[ConstituencyTree],
) -> Result<AnaphoraInstance> {
    let antecedents: Vec<Vec<String>> = antecedents.iter().map(|a| preprocess(a)).collect();
    let sentence_tokens: Vec<Vec<String>> = sentences.iter().map(|s| preprocess(&s.tokens())).collect();
    for ante in &antecedents {
        if ante.is_empty() {
            return Err(Error::contract(format!("{}: empty antecedent", mention.id)));
        }
        if !sentence_tokens.iter().any(|s| contains_run(s, ante)) {
            return Err(Error::contract(format!(
                "{}: antecedent {:?} not found in any candidate sentence",
                mention.id,
                ante.join(" ")
            )));
        }
    }

    let mut seen = BTreeSet::new();
    let mut candidates = Vec::new();
    for (si, (tree, tokens)) in sentences.iter().zip(&sentence_tokens).enumerate() {
        for cons in enumerate_constituents(tree) {
            let cand_tokens = tokens[cons.span.start..cons.span.end].to_vec();
            if !seen.insert((cand_tokens.clone(), cons.tag.clone())) {
                continue;
            }
            let positive = antecedents.iter().any(|a| match_is_positive(&cand_tokens, a));
            candidates.push(Candidate {
                tokens: cand_tokens,
                tag: cons.tag,
                label: if positive { Label::Positive } else { Label::Negative },
                first_pos: cons.first_pos,
                source_sentence_index: si,
            });
        }
    }

    let instance = AnaphoraInstance {
        id: mention.id,
        kind: mention.kind,
        anaphs: preprocess(&mention.anaphs),
        anaphor_span: mention.anaphor_span,
        anaphor_head: mention.anaphor_head,
        candidates,
        antecedents,
        prev_sentence: mention.prev_sentence.map(|p| preprocess(&p)),
    };
    instance.validate()?;
    Ok(instance)
}

/// Builds an instance from an artificial pair and the sentence it was cut from.
pub fn instance_from_pair(pair: &GeneratedPair, sentence: &ConstituencyTree) -> Result<AnaphoraInstance> {
    let mention = AnaphorMention {
        id: pair.instance_id(),
        kind: AnaphorKind::Pronominal,
        anaphs: pair.anaphoric_sentence_tokens.clone(),
        anaphor_span: pair.anaphor_span,
        anaphor_head: pair.anaphor_head_index,
        prev_sentence: None,
    };
    build_instance(mention, std::slice::from_ref(&pair.antecedent_tokens), std::slice::from_ref(sentence))
}

/// Dataset-wide counts of `(first-word POS, constituent tag)`.
#[derive(Clone, Debug, Default)]
pub struct TagFrequency {
    counts: HashMap<(String, String), usize>,
}

impl TagFrequency {
    pub fn from_instances<'a>(instances: impl IntoIterator<Item = &'a AnaphoraInstance>) -> Self {
        let mut freq = TagFrequency::default();
        for inst in instances {
            for c in &inst.candidates {
                freq.add(&c.first_pos, &c.tag);
            }
        }
        freq
    }

    pub fn add(&mut self, first_pos: &str, tag: &str) {
        *self
            .counts
            .entry((first_pos.to_string(), tag.to_string()))
            .or_default() += 1;
    }

    pub fn count(&self, first_pos: &str, tag: &str) -> usize {
        self.counts
            .get(&(first_pos.to_string(), tag.to_string()))
            .copied()
            .unwrap_or(0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DedupOutcome {
    pub candidates: Vec<Candidate>,
    /// A positive string kept several tags that the counts could not separate.
    pub unresolved_positive_tie: bool,
}

/// Keeps one candidate per token string: the one whose tag is most frequent
/// among candidates with the same first-word POS. Remaining ties keep the
/// first occurrence. Group order follows first occurrence.
pub fn dedup_candidates(candidates: Vec<Candidate>, freq: &TagFrequency) -> DedupOutcome {
    let mut groups: Vec<Vec<Candidate>> = Vec::new();
    let mut index: HashMap<Vec<String>, usize> = HashMap::new();
    for c in candidates {
        match index.get(&c.tokens) {
            Some(&g) => groups[g].push(c),
            None => {
                index.insert(c.tokens.clone(), groups.len());
                groups.push(vec![c]);
            }
        }
    }

    let mut unresolved_positive_tie = false;
    let mut out = Vec::with_capacity(groups.len());
    for group in groups {
        let score = |c: &Candidate| freq.count(&c.first_pos, &c.tag);
        let best = group.iter().map(score).max().unwrap_or(0);
        let tied: Vec<&Candidate> = group.iter().filter(|c| score(c) == best).collect();
        let distinct_tags: BTreeSet<&str> = tied.iter().map(|c| c.tag.as_str()).collect();
        if distinct_tags.len() > 1 && group.iter().any(|c| c.is_positive()) {
            unresolved_positive_tie = true;
        }
        out.push(tied[0].clone());
    }
    DedupOutcome {
        candidates: out,
        unresolved_positive_tie,
    }
}

#[derive(Clone, Debug)]
pub struct BuildOptions {
    /// Training sets drop degenerate and ambiguous instances; test sets keep them.
    pub training: bool,
    /// Keep every positive and sample negatives up to this many candidates.
    pub max_candidates: Option<usize>,
    pub seed: u64,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions {
            training: true,
            max_candidates: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct BuildReport {
    pub input: usize,
    pub kept: usize,
    pub dropped_degenerate: usize,
    pub dropped_duplicate_antecedent: usize,
    pub degenerate_kept: usize,
}

/// Second pass over a dataset: de-duplication with dataset-wide tag counts,
/// the training-set noise filters, and optional negative down-sampling.
pub fn finalize_dataset(
    instances: Vec<AnaphoraInstance>,
    opts: &BuildOptions,
) -> (Vec<AnaphoraInstance>, BuildReport) {
    let freq = TagFrequency::from_instances(&instances);
    let mut report = BuildReport {
        input: instances.len(),
        ..Default::default()
    };
    let mut out = Vec::with_capacity(instances.len());
    for mut inst in instances {
        let outcome = dedup_candidates(std::mem::take(&mut inst.candidates), &freq);
        inst.candidates = outcome.candidates;
        if inst.is_degenerate() {
            if opts.training {
                report.dropped_degenerate += 1;
                continue;
            }
            report.degenerate_kept += 1;
        }
        if opts.training && outcome.unresolved_positive_tie {
            report.dropped_duplicate_antecedent += 1;
            continue;
        }
        if let Some(max) = opts.max_candidates {
            downsample_negatives(&mut inst, max, opts.seed);
        }
        out.push(inst);
    }
    report.kept = out.len();
    (out, report)
}

fn downsample_negatives(inst: &mut AnaphoraInstance, max: usize, seed: u64) {
    let n_pos = inst.n_positive();
    let negatives: Vec<usize> = (0..inst.candidates.len())
        .filter(|&i| !inst.candidates[i].is_positive())
        .collect();
    let budget = max.saturating_sub(n_pos);
    if negatives.len() <= budget {
        return;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &inst.id, 0, 0));
    let keep: BTreeSet<usize> = sample(&mut rng, negatives.len(), budget)
        .into_iter()
        .map(|k| negatives[k])
        .collect();
    let mut i = 0;
    inst.candidates.retain(|c| {
        let kept = c.is_positive() || keep.contains(&i);
        i += 1;
        kept
    });
}

/// Result of rewriting a cataphoric shell-noun sentence into an anaphoric one.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShellNounRewrite {
    pub tokens: Vec<String>,
    /// Span of `this <shell noun>` in the rewritten sentence.
    pub anaphor_span: Span,
    pub head_index: usize,
}

const DETERMINERS: &[&str] = &["the", "a", "an", "this", "that", "these", "those"];
const COMPLEMENTIZERS: &[&str] = &["that", "whether", "if", "to", "of"];

/// Removes the embedded antecedent from a sentence and turns the shell noun
/// phrase into `this <shell noun>`.
///
/// The shell noun is the last occurrence before the antecedent (or the first
/// one anywhere if none precedes it). A determiner directly before the noun is
/// replaced, otherwise `this` is inserted; capitalisation of the replaced
/// token is kept. A complementizer between noun and antecedent
/// (`that`, `whether`, `if`, `to`, `of`) is removed with the antecedent.
pub fn shellnoun_transform(
    sentence: &[String],
    antecedent_span: Span,
    shell_noun: &str,
) -> Result<ShellNounRewrite> {
    if antecedent_span.end > sentence.len() || antecedent_span.start > antecedent_span.end {
        return Err(Error::contract(format!(
            "antecedent span {antecedent_span} outside sentence of {} tokens",
            sentence.len()
        )));
    }
    let shell_noun = shell_noun.to_lowercase();
    let is_noun = |t: &String| t.to_lowercase() == shell_noun;
    let noun = (0..antecedent_span.start)
        .rev()
        .find(|&i| is_noun(&sentence[i]))
        .or_else(|| {
            (0..sentence.len())
                .find(|&i| !(antecedent_span.start..antecedent_span.end).contains(&i) && is_noun(&sentence[i]))
        })
        .ok_or_else(|| Error::contract(format!("shell noun {shell_noun:?} not in sentence")))?;

    let mut removed: Vec<bool> = (0..sentence.len())
        .map(|i| (antecedent_span.start..antecedent_span.end).contains(&i))
        .collect();
    if !antecedent_span.is_empty() && antecedent_span.start == noun + 2 {
        let between = sentence[noun + 1].to_lowercase();
        if COMPLEMENTIZERS.contains(&between.as_str()) {
            removed[noun + 1] = true;
        }
    }

    let mut tokens = Vec::with_capacity(sentence.len());
    let mut head_index = 0;
    for (i, tok) in sentence.iter().enumerate() {
        if removed[i] {
            continue;
        }
        if i + 1 == noun && DETERMINERS.contains(&tok.to_lowercase().as_str()) {
            tokens.push(this_like(tok));
            continue;
        }
        if i == noun {
            let has_det = noun > 0 && DETERMINERS.contains(&sentence[noun - 1].to_lowercase().as_str());
            if !has_det {
                tokens.push(if noun == 0 { "This".into() } else { "this".into() });
            }
            head_index = tokens.len();
        }
        tokens.push(tok.clone());
    }
    Ok(ShellNounRewrite {
        anaphor_span: Span::new(head_index - 1, head_index + 1),
        head_index,
        tokens,
    })
}

fn this_like(template: &str) -> String {
    if template.chars().next().is_some_and(|c| c.is_uppercase()) {
        "This".into()
    } else {
        "this".into()
    }
}

/// An annotated anaphor with antecedents and the parsed sentences that
/// contain them (the format for ARRAU-style test data).
#[derive(Clone, Debug, Deserialize, Serialize)]
pub struct AnnotatedRecord {
    pub id: String,
    pub kind: AnaphorKind,
    pub anaphs: Vec<String>,
    pub anaphor_span: Span,
    pub anaphor_head: usize,
    pub antecedents: Vec<Vec<String>>,
    /// Bracketed parses of the antecedent-bearing sentences.
    pub sentences: Vec<String>,
    #[serde(default)]
    pub prev_sentence: Option<Vec<String>>,
}

impl AnnotatedRecord {
    pub fn into_instance(self) -> Result<AnaphoraInstance> {
        let trees = self
            .sentences
            .iter()
            .map(|s| parse_bracketed(s))
            .collect::<Result<Vec<_>>>()?;
        let mention = AnaphorMention {
            id: self.id,
            kind: self.kind,
            anaphs: self.anaphs,
            anaphor_span: self.anaphor_span,
            anaphor_head: self.anaphor_head,
            prev_sentence: self.prev_sentence,
        };
        build_instance(mention, &self.antecedents, &trees)
    }
}

/// A cataphoric shell-noun sentence: the antecedent is embedded in the
/// sentence and is cut out to produce the anaphoric sentence.
#[derive(Clone, Debug, Deserialize, Serialize)]
pub struct ShellNounRecord {
    pub id: String,
    pub tree: String,
    pub antecedent_span: Span,
    pub shell_noun: String,
}

impl ShellNounRecord {
    pub fn into_instance(self) -> Result<AnaphoraInstance> {
        let tree = parse_bracketed(&self.tree)?;
        let sentence = tree.tokens();
        let rewrite = shellnoun_transform(&sentence, self.antecedent_span, &self.shell_noun)?;
        let antecedent = sentence[self.antecedent_span.start..self.antecedent_span.end].to_vec();
        let mention = AnaphorMention {
            id: self.id,
            kind: AnaphorKind::Nominal,
            anaphs: rewrite.tokens,
            anaphor_span: rewrite.anaphor_span,
            anaphor_head: rewrite.head_index,
            prev_sentence: None,
        };
        build_instance(mention, &[antecedent], std::slice::from_ref(&tree))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub instances: usize,
    pub median_antecedent_len: f64,
    pub median_anaphs_len: f64,
    pub median_positives: f64,
    pub median_negatives: f64,
    pub nominal: usize,
    pub pronominal: usize,
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    })
}

/// Corpus statistics. Antecedent lengths are pooled over all gold antecedents
/// (or positive candidates when an instance carries no antecedent list).
pub fn corpus_stats(instances: &[AnaphoraInstance]) -> Result<StatsReport> {
    if instances.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut ante_lens = Vec::new();
    for inst in instances {
        if inst.antecedents.is_empty() {
            ante_lens.extend(
                inst.candidates
                    .iter()
                    .filter(|c| c.is_positive())
                    .map(|c| c.tokens.len() as f64),
            );
        } else {
            ante_lens.extend(inst.antecedents.iter().map(|a| a.len() as f64));
        }
    }
    let mut anaphs: Vec<f64> = instances.iter().map(|i| i.anaphs.len() as f64).collect();
    let mut pos: Vec<f64> = instances.iter().map(|i| i.n_positive() as f64).collect();
    let mut neg: Vec<f64> = instances.iter().map(|i| i.n_negative() as f64).collect();
    Ok(StatsReport {
        instances: instances.len(),
        median_antecedent_len: median(&mut ante_lens).unwrap_or(0.0),
        median_anaphs_len: median(&mut anaphs).unwrap_or(0.0),
        median_positives: median(&mut pos).unwrap_or(0.0),
        median_negatives: median(&mut neg).unwrap_or(0.0),
        nominal: instances.iter().filter(|i| i.kind == AnaphorKind::Nominal).count(),
        pronominal: instances.iter().filter(|i| i.kind == AnaphorKind::Pronominal).count(),
    })
}

pub const PAD: &str = "<PAD>";
pub const UNK: &str = "<UNK>";
pub const UNK_TAG: &str = "<UNK-TAG>";
pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const UNK_TAG_ID: usize = 0;

/// Clause, phrase and part-of-speech labels produced by the Stanford parser
/// on Penn Treebank style input.
pub const STANDARD_TAGS: &[&str] = &[
    "ROOT", "S", "SBAR", "SBARQ", "SINV", "SQ", "ADJP", "ADVP", "CONJP", "FRAG", "INTJ", "LST",
    "NAC", "NP", "NX", "PP", "PRN", "PRT", "QP", "RRC", "UCP", "VP", "WHADJP", "WHADVP", "WHNP",
    "WHPP", "X", "CC", "CD", "DT", "EX", "FW", "IN", "JJ", "JJR", "JJS", "LS", "MD", "NN", "NNS",
    "NNP", "NNPS", "PDT", "POS", "PRP", "PRP$", "RB", "RBR", "RBS", "RP", "SYM", "TO", "UH", "VB",
    "VBD", "VBG", "VBN", "VBP", "VBZ", "WDT", "WP", "WP$", "WRB", "#", "$", ".", ",", ":", "``",
    "''", "-LRB-", "-RRB-",
];

/// Word and tag ids. Word id 0 is padding, 1 is the unknown word; tag id 0 is
/// the unknown tag.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "VocabularyFile", into = "VocabularyFile")]
pub struct Vocabulary {
    words: Vec<String>,
    tags: Vec<String>,
    min_freq: f64,
    word_to_id: HashMap<String, usize>,
    tag_to_id: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabularyFile {
    min_freq: f64,
    words: Vec<String>,
    tags: Vec<String>,
}

impl From<VocabularyFile> for Vocabulary {
    fn from(f: VocabularyFile) -> Self {
        Vocabulary::from_parts(f.words, f.tags, f.min_freq)
    }
}

impl From<Vocabulary> for VocabularyFile {
    fn from(v: Vocabulary) -> Self {
        VocabularyFile {
            min_freq: v.min_freq,
            words: v.words,
            tags: v.tags,
        }
    }
}

impl Vocabulary {
    fn from_parts(words: Vec<String>, tags: Vec<String>, min_freq: f64) -> Self {
        let word_to_id = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        let tag_to_id = tags.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocabulary {
            words,
            tags,
            min_freq,
            word_to_id,
            tag_to_id,
        }
    }

    /// Words of the training data with frequency at least `min_freq`.
    pub fn build<'a>(instances: impl IntoIterator<Item = &'a AnaphoraInstance>, min_freq: f64) -> Self {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        let mut seen_tags = BTreeSet::new();
        for inst in instances {
            for w in &inst.anaphs {
                *counts.entry(w).or_default() += 1;
            }
            for c in &inst.candidates {
                for w in &c.tokens {
                    *counts.entry(w).or_default() += 1;
                }
                seen_tags.insert(c.tag.as_str());
                seen_tags.insert(c.first_pos.as_str());
            }
        }
        let mut kept: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|&(w, n)| n as f64 >= min_freq && w != PAD && w != UNK)
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));

        let mut words = vec![PAD.to_string(), UNK.to_string()];
        words.extend(kept.into_iter().map(|(w, _)| w.to_string()));

        let mut tags = vec![UNK_TAG.to_string()];
        tags.extend(STANDARD_TAGS.iter().map(|t| t.to_string()));
        for t in seen_tags {
            if !t.is_empty() && !STANDARD_TAGS.contains(&t) {
                tags.push(t.to_string());
            }
        }
        Vocabulary::from_parts(words, tags, min_freq)
    }

    pub fn word_id(&self, word: &str) -> usize {
        self.word_to_id.get(word).copied().unwrap_or(UNK_ID)
    }

    pub fn tag_id(&self, tag: &str) -> usize {
        self.tag_to_id.get(tag).copied().unwrap_or(UNK_TAG_ID)
    }

    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn tags(&self) -> &[String] {
        &self.tags
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.len() <= 2
    }

    pub fn n_tags(&self) -> usize {
        self.tags.len()
    }

    pub fn min_freq(&self) -> f64 {
        self.min_freq
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.word_id(t)).collect()
    }
}

/// Reads one JSON value per non-empty line.
pub fn read_jsonl<T: for<'de> Deserialize<'de>>(reader: impl BufRead) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            offset: n + 1,
            message: format!("line {}: {e}", n + 1),
        })?);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(mut writer: impl Write, items: &[T]) -> Result<()> {
    for item in items {
        serde_json::to_writer(&mut writer, item)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}
