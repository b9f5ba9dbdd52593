//! success@n, baselines and analysis dumps.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{matches, median, AnaphoraInstance, AnaphorKind, Candidate, MatchMode};
use crate::model::{self, Model, SeqInput};
use crate::treebank::Span;
use crate::{worker_threads, Error, Result};

/// Tags the TAG baseline draws from.
pub const CLAUSAL_TAGS: &[&str] = &["S", "VP", "ROOT", "SBAR"];

/// Seeds of the TAG baseline runs.
pub const BASELINE_SEEDS: [u64; 10] = [11, 23, 37, 41, 53, 67, 71, 83, 97, 101];

pub const MAX_N: usize = 4;

/// Candidate indices by descending score; equal scores keep index order.
pub fn rank(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

/// Whether a candidate counts as a correct answer: it matches a gold
/// antecedent, or, for instances without an antecedent list, it is labeled
/// positive.
pub fn acceptable(inst: &AnaphoraInstance, cand: &Candidate, mode: MatchMode) -> bool {
    if inst.antecedents.is_empty() {
        cand.is_positive()
    } else {
        inst.antecedents.iter().any(|a| matches(&cand.tokens, a, mode))
    }
}

/// True iff one of the first `n` ranked candidates matches an antecedent.
pub fn success_at_n<S: AsRef<str>>(ranked: &[Vec<S>], antecedents: &[Vec<S>], n: usize, mode: MatchMode) -> bool {
    ranked
        .iter()
        .take(n)
        .any(|c| antecedents.iter().any(|a| matches(c, a, mode)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceResult {
    pub id: String,
    pub kind: AnaphorKind,
    pub ranking: Vec<usize>,
    pub scores: Vec<f64>,
    /// 1-based rank of the first acceptable candidate.
    pub first_hit: Option<usize>,
    /// Tags of the candidates in ranked order.
    pub ranked_tags: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubsetScores {
    pub subset: String,
    pub instances: usize,
    /// s@1 .. s@4.
    pub s: [f64; MAX_N],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub instances: Vec<InstanceResult>,
    /// `all`, then `nominal` and `pronominal` when non-empty.
    pub subsets: Vec<SubsetScores>,
}

impl EvalReport {
    pub fn subset(&self, name: &str) -> Option<&SubsetScores> {
        self.subsets.iter().find(|s| s.subset == name)
    }

    pub fn overall(&self) -> &SubsetScores {
        &self.subsets[0]
    }
}

pub fn instance_result(inst: &AnaphoraInstance, scores: &[f64], mode: MatchMode) -> Result<InstanceResult> {
    if scores.len() != inst.candidates.len() {
        return Err(Error::contract(format!(
            "{}: {} scores for {} candidates",
            inst.id,
            scores.len(),
            inst.candidates.len()
        )));
    }
    let ranking = rank(scores);
    let first_hit = ranking
        .iter()
        .position(|&i| acceptable(inst, &inst.candidates[i], mode))
        .map(|p| p + 1);
    Ok(InstanceResult {
        id: inst.id.clone(),
        kind: inst.kind,
        ranked_tags: ranking.iter().map(|&i| inst.candidates[i].tag.clone()).collect(),
        ranking,
        scores: scores.to_vec(),
        first_hit,
    })
}

fn subset_scores(name: &str, results: &[&InstanceResult]) -> SubsetScores {
    let mut s = [0.0; MAX_N];
    if !results.is_empty() {
        for (n, slot) in s.iter_mut().enumerate() {
            let hits = results.iter().filter(|r| r.first_hit.is_some_and(|h| h <= n + 1)).count();
            *slot = hits as f64 / results.len() as f64;
        }
    }
    SubsetScores {
        subset: name.into(),
        instances: results.len(),
        s,
    }
}

/// Aggregates per-instance results into `all`, `nominal` and `pronominal`.
pub fn aggregate(results: Vec<InstanceResult>) -> EvalReport {
    let all: Vec<&InstanceResult> = results.iter().collect();
    let mut subsets = vec![subset_scores("all", &all)];
    for (name, kind) in [("nominal", AnaphorKind::Nominal), ("pronominal", AnaphorKind::Pronominal)] {
        let part: Vec<&InstanceResult> = results.iter().filter(|r| r.kind == kind).collect();
        if !part.is_empty() {
            subsets.push(subset_scores(name, &part));
        }
    }
    EvalReport {
        instances: results,
        subsets,
    }
}

/// Report from externally supplied scores, one list per instance.
pub fn report_from_scores(instances: &[AnaphoraInstance], scores: &[Vec<f64>], mode: MatchMode) -> Result<EvalReport> {
    let results = instances
        .iter()
        .zip(scores)
        .map(|(i, s)| instance_result(i, s, mode))
        .collect::<Result<Vec<_>>>()?;
    Ok(aggregate(results))
}

/// Scores all instances with the model, spread over [`worker_threads`].
pub fn score_all(model: &Model, instances: &[AnaphoraInstance]) -> Result<Vec<Vec<f64>>> {
    let threads = worker_threads().min(instances.len()).max(1);
    let chunk = instances.len().div_ceil(threads).max(1);
    let score_chunk = |part: &[AnaphoraInstance]| -> Result<Vec<Vec<f64>>> {
        part.iter()
            .map(|inst| {
                if inst.candidates.is_empty() {
                    return Ok(Vec::new());
                }
                let p = model.prepare(inst)?;
                model::score_instance(&model.params, &p)
            })
            .collect()
    };
    if threads == 1 {
        return score_chunk(instances);
    }
    let parts: Vec<Result<Vec<Vec<f64>>>> = std::thread::scope(|s| {
        let handles: Vec<_> = instances
            .chunks(chunk)
            .map(|part| s.spawn(move || score_chunk(part)))
            .collect();
        handles.into_iter().map(|h| h.join().expect("scoring thread panicked")).collect()
    });
    let mut out = Vec::with_capacity(instances.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

pub fn evaluate(model: &Model, instances: &[AnaphoraInstance], mode: MatchMode) -> Result<EvalReport> {
    let scores = score_all(model, instances)?;
    report_from_scores(instances, &scores, mode)
}

/// s@1 of one TAG baseline run.
fn tag_baseline_run(instances: &[AnaphoraInstance], seed: u64, mode: MatchMode) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0usize;
    for inst in instances {
        if inst.candidates.is_empty() {
            continue;
        }
        let qualifying: Vec<usize> = (0..inst.candidates.len())
            .filter(|&i| CLAUSAL_TAGS.contains(&inst.candidates[i].tag.as_str()))
            .collect();
        let pick = if qualifying.is_empty() {
            rng.random_range(0..inst.candidates.len())
        } else {
            qualifying[rng.random_range(0..qualifying.len())]
        };
        if acceptable(inst, &inst.candidates[pick], mode) {
            hits += 1;
        }
    }
    hits as f64 / instances.len() as f64
}

/// Mean s@1 of choosing a random candidate tagged S, VP, ROOT or SBAR (any
/// candidate when none is), one run per seed.
pub fn tag_baseline(instances: &[AnaphoraInstance], seeds: &[u64], mode: MatchMode) -> Result<f64> {
    if instances.is_empty() || seeds.is_empty() {
        return Err(Error::EmptyInput);
    }
    let total: f64 = seeds.iter().map(|&s| tag_baseline_run(instances, s, mode)).sum();
    Ok(total / seeds.len() as f64)
}

/// s@1 of predicting the preceding sentence. Instances without one count as misses.
pub fn preceding_sentence_baseline(instances: &[AnaphoraInstance], mode: MatchMode) -> Result<f64> {
    if instances.is_empty() {
        return Err(Error::EmptyInput);
    }
    let hits = instances
        .iter()
        .filter(|inst| {
            let Some(prev) = &inst.prev_sentence else {
                return false;
            };
            if inst.antecedents.is_empty() {
                inst.candidates
                    .iter()
                    .any(|c| c.is_positive() && matches(prev, &c.tokens, mode))
            } else {
                inst.antecedents.iter().any(|a| matches(prev, a, mode))
            }
        })
        .count();
    Ok(hits as f64 / instances.len() as f64)
}

/// Instances of one subset (`all`, `nominal` or `pronominal`).
pub fn filter_subset(instances: &[AnaphoraInstance], subset: &str) -> Result<Vec<AnaphoraInstance>> {
    let kind = match subset {
        "all" => return Ok(instances.to_vec()),
        "nominal" => AnaphorKind::Nominal,
        "pronominal" => AnaphorKind::Pronominal,
        other => return Err(Error::Config(format!("unknown subset {other:?}"))),
    };
    Ok(instances.iter().filter(|i| i.kind == kind).cloned().collect())
}

/// One line of a results table; baseline rows leave unmeasured columns empty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub variant: String,
    pub subset: String,
    pub values: [Option<f64>; MAX_N],
}

impl TableRow {
    pub fn from_scores(variant: &str, s: &SubsetScores) -> Self {
        TableRow {
            variant: variant.into(),
            subset: s.subset.clone(),
            values: s.s.map(Some),
        }
    }

    pub fn baseline(name: &str, subset: &str, s1: f64) -> Self {
        TableRow {
            variant: name.into(),
            subset: subset.into(),
            values: [Some(s1), None, None, None],
        }
    }

    pub fn is_monotone(&self) -> bool {
        let v: Vec<f64> = self.values.iter().flatten().copied().collect();
        v.windows(2).all(|w| w[0] <= w[1])
    }
}

pub const TABLE_HEADER: &str = "variant\tsubset\ts@1\ts@2\ts@3\ts@4";

pub fn render_table(rows: &[TableRow]) -> String {
    let mut out = String::from(TABLE_HEADER);
    out.push('\n');
    for r in rows {
        write!(out, "{}\t{}", r.variant, r.subset).expect("write to string");
        for v in &r.values {
            match v {
                Some(x) => write!(out, "\t{x:.4}"),
                None => write!(out, "\t-"),
            }
            .expect("write to string");
        }
        out.push('\n');
    }
    out
}

pub fn parse_table(text: &str) -> Result<Vec<TableRow>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    match lines.next() {
        Some(h) if h.trim_end() == TABLE_HEADER => {}
        _ => {
            return Err(Error::Parse {
                offset: 0,
                message: "missing results table header".into(),
            })
        }
    }
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate() {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 2 + MAX_N {
            return Err(Error::Parse {
                offset: n + 2,
                message: format!("line {}: expected {} fields", n + 2, 2 + MAX_N),
            });
        }
        let mut values = [None; MAX_N];
        for (slot, field) in values.iter_mut().zip(&f[2..]) {
            if *field != "-" {
                *slot = Some(field.parse::<f64>().map_err(|e| Error::Parse {
                    offset: n + 2,
                    message: format!("line {}: {e}", n + 2),
                })?);
            }
        }
        rows.push(TableRow {
            variant: f[0].into(),
            subset: f[1].into(),
            values,
        });
    }
    Ok(rows)
}

/// Median number of candidates among the top four whose tag is not S, VP,
/// ROOT or SBAR.
pub fn tag_census(report: &EvalReport) -> Option<f64> {
    let mut counts: Vec<f64> = report
        .instances
        .iter()
        .map(|r| {
            r.ranked_tags
                .iter()
                .take(MAX_N)
                .filter(|t| !CLAUSAL_TAGS.contains(&t.as_str()))
                .count() as f64
        })
        .collect();
    median(&mut counts)
}

/// Absolute difference of the bi-LSTM outputs over an anaphoric sentence
/// when the anaphor is marked at `a` and when it is marked at `b`. Rows are
/// output dimensions, columns are tokens.
pub fn anaphor_sensitivity(
    model: &Model,
    anaphs: &[String],
    a: (Span, usize),
    b: (Span, usize),
) -> Result<Vec<Vec<f64>>> {
    let ids = model.vocab.encode(anaphs);
    let p = &model.params;
    let run = |(span, head): (Span, usize)| -> Result<Vec<Vec<f64>>> {
        let (ctx, h) = p.anaphor_vectors(&ids, span, head)?;
        model::sequence_outputs(
            p,
            SeqInput {
                words: &ids,
                ctx: &ctx,
                head: &h,
                tag: p.s_tag_id,
            },
        )
    };
    let (oa, ob) = (run(a)?, run(b)?);
    let dims = 2 * p.config.h_lstm;
    Ok((0..dims)
        .map(|d| oa.iter().zip(&ob).map(|(x, y)| (x[d] - y[d]).abs()).collect())
        .collect())
}

pub fn render_matrix_tsv(tokens: &[String], matrix: &[Vec<f64>]) -> String {
    let mut out = String::from("dim");
    for t in tokens {
        out.push('\t');
        out.push_str(t);
    }
    out.push('\n');
    for (d, row) in matrix.iter().enumerate() {
        write!(out, "{d}").expect("write to string");
        for v in row {
            write!(out, "\t{v:.6e}").expect("write to string");
        }
        out.push('\n');
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointRow {
    pub instance: String,
    pub candidate: usize,
    /// 1-based predicted rank.
    pub rank: usize,
    pub tag: String,
    pub positive: bool,
    pub vector: Vec<f64>,
}

/// The vector entering the scorer for every candidate, with its predicted
/// rank and tag.
pub fn joint_representation_dump(model: &Model, inst: &AnaphoraInstance) -> Result<Vec<JointRow>> {
    let p = model.prepare(inst)?;
    let pairs = model::encode_pairs(&model.params, &p)?;
    let scores: Vec<f64> = pairs.iter().map(|e| e.score).collect();
    let mut rank_of = vec![0; scores.len()];
    for (r, &i) in rank(&scores).iter().enumerate() {
        rank_of[i] = r + 1;
    }
    Ok(pairs
        .into_iter()
        .enumerate()
        .map(|(k, e)| JointRow {
            instance: inst.id.clone(),
            candidate: k,
            rank: rank_of[k],
            tag: inst.candidates[k].tag.clone(),
            positive: inst.candidates[k].is_positive(),
            vector: e.h_tilde_cs,
        })
        .collect())
}
