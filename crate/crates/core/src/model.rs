//! The siamese bi-LSTM mention-ranking scorer.
//!
//! A word of the anaphoric sentence or of a candidate is represented by the
//! concatenation of
//!
//! * its word embedding,
//! * the anaphor context vector (mean embedding of the anaphoric phrase and
//!   the words around it), flag `ctx`,
//! * the embedding of the anaphor head, flag `aa`,
//! * the embedding of the constituent tag of the sequence (`S` for the
//!   anaphoric sentence), flag `tag`.
//!
//! One bi-LSTM encodes both sequences; outputs are averaged over non-padding
//! positions. Flag `cut` appends the sequence tag embedding to the average,
//! flag `ffl1` sends the result through an ELU layer. The candidate and
//! sentence vectors are joined as `[|c - s|; c * s]`, optionally passed through
//! a second ELU layer (`ffl2`) and scored linearly.

use std::fs;
use std::io::BufReader;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{AnaphoraInstance, AnaphorKind, Vocabulary, PAD_ID};
use crate::tensor::{
    init_he, init_orthogonal, init_uniform, read_tensors, write_tensors, CheckpointManifest, Graph, Tensor, Var,
};
use crate::treebank::Span;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Flags {
    pub ctx: bool,
    pub aa: bool,
    pub tag: bool,
    pub cut: bool,
    pub ffl1: bool,
    pub ffl2: bool,
}

impl Default for Flags {
    fn default() -> Self {
        Flags {
            ctx: true,
            aa: true,
            tag: true,
            cut: true,
            ffl1: true,
            ffl2: true,
        }
    }
}

impl Flags {
    /// Variant name listing the disabled blocks, e.g. `-(tag,cut)`; `full`
    /// when everything is on.
    pub fn variant_name(&self) -> String {
        let off: Vec<&str> = [
            ("ctx", self.ctx),
            ("aa", self.aa),
            ("tag", self.tag),
            ("cut", self.cut),
            ("ffl1", self.ffl1),
            ("ffl2", self.ffl2),
        ]
        .iter()
        .filter(|(_, on)| !on)
        .map(|(n, _)| *n)
        .collect();
        if off.is_empty() {
            "full".into()
        } else if off.len() == 1 {
            format!("-{}", off[0])
        } else {
            format!("-({})", off.join(","))
        }
    }

    fn uses_tag_table(&self) -> bool {
        self.tag || self.cut
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_word: usize,
    pub d_tag: usize,
    pub h_lstm: usize,
    pub h_ffl1: usize,
    pub h_ffl2: usize,
    pub flags: Flags,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_word: 100,
            d_tag: 50,
            h_lstm: 100,
            h_ffl1: 100,
            h_ffl2: 100,
            flags: Flags::default(),
        }
    }
}

impl ModelConfig {
    /// Width of the word-level constant block (word, context, head).
    pub fn word_block_width(&self) -> usize {
        self.d_word * (1 + usize::from(self.flags.ctx) + usize::from(self.flags.aa))
    }

    /// Width of a composed word vector.
    pub fn input_width(&self) -> usize {
        self.word_block_width() + if self.flags.tag { self.d_tag } else { 0 }
    }

    /// Width of the pooled sequence vector, with the shortcut if enabled.
    pub fn pooled_width(&self) -> usize {
        2 * self.h_lstm + if self.flags.cut { self.d_tag } else { 0 }
    }

    /// Width of the per-sequence vector entering the joint representation.
    pub fn sequence_width(&self) -> usize {
        if self.flags.ffl1 {
            self.h_ffl1
        } else {
            self.pooled_width()
        }
    }

    pub fn joint_width(&self) -> usize {
        2 * self.sequence_width()
    }

    /// Input width of the scorer.
    pub fn scorer_width(&self) -> usize {
        if self.flags.ffl2 {
            self.h_ffl2
        } else {
            self.joint_width()
        }
    }

    /// Number of trainable parameters for a tag vocabulary of `n_tags`.
    /// Word embeddings are frozen and not counted.
    pub fn parameter_count(&self, n_tags: usize) -> usize {
        let h = self.h_lstm;
        let tags = if self.flags.uses_tag_table() { n_tags * self.d_tag } else { 0 };
        let lstm = 2 * (4 * h * (self.input_width() + h) + 4 * h);
        let ffl1 = if self.flags.ffl1 {
            self.pooled_width() * self.h_ffl1 + self.h_ffl1
        } else {
            0
        };
        let ffl2 = if self.flags.ffl2 {
            self.joint_width() * self.h_ffl2 + self.h_ffl2
        } else {
            0
        };
        tags + lstm + ffl1 + ffl2 + self.scorer_width() + 1
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("d_word", self.d_word),
            ("h_lstm", self.h_lstm),
            ("h_ffl1", if self.flags.ffl1 { self.h_ffl1 } else { 1 }),
            ("h_ffl2", if self.flags.ffl2 { self.h_ffl2 } else { 1 }),
            ("d_tag", if self.flags.uses_tag_table() { self.d_tag } else { 1 }),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams {
    /// `input_width x 4h`, gate blocks in the order input, forget, output, cell.
    pub w_ih: Tensor,
    /// `h x 4h`.
    pub w_hh: Tensor,
    pub b: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub w: Tensor,
    pub b: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    /// Frozen, one row per vocabulary word; row 0 (padding) is zero.
    pub word_embeddings: Tensor,
    pub tag_embeddings: Option<Tensor>,
    pub s_tag_id: usize,
    pub n_tags: usize,
    pub fw: LstmParams,
    pub bw: LstmParams,
    pub ffl1: Option<Dense>,
    pub ffl2: Option<Dense>,
    pub scorer: Dense,
}

fn lstm_init(input: usize, h: usize, rng: &mut ChaCha8Rng) -> LstmParams {
    let mut b = Tensor::zeros(&[4 * h]);
    b.data_mut()[h..2 * h].iter_mut().for_each(|v| *v = 1.0);
    LstmParams {
        w_ih: init_orthogonal(input, 4 * h, rng),
        w_hh: init_orthogonal(h, 4 * h, rng),
        b,
    }
}

fn dense_init(fan_in: usize, out: usize, rng: &mut ChaCha8Rng) -> Dense {
    Dense {
        w: init_he(fan_in, &[fan_in, out], rng),
        b: Tensor::zeros(&[out]),
    }
}

impl ModelParams {
    /// Fresh parameters. LSTM matrices are orthogonal with forget bias 1, the
    /// feed-forward and scorer matrices use He initialisation, tag embeddings
    /// are uniform in `±1/sqrt(d_tag + n_tags)`.
    pub fn init(config: ModelConfig, word_embeddings: Tensor, n_tags: usize, s_tag_id: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if word_embeddings.cols() != config.d_word {
            return Err(Error::Config(format!(
                "word embeddings have {} dimensions, config says {}",
                word_embeddings.cols(),
                config.d_word
            )));
        }
        if s_tag_id >= n_tags {
            return Err(Error::contract("S tag id outside the tag vocabulary"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tag_embeddings = config.flags.uses_tag_table().then(|| {
            let bound = 1.0 / ((config.d_tag + n_tags) as f64).sqrt();
            init_uniform(-bound, bound, &[n_tags, config.d_tag], &mut rng)
        });
        let fw = lstm_init(config.input_width(), config.h_lstm, &mut rng);
        let bw = lstm_init(config.input_width(), config.h_lstm, &mut rng);
        let ffl1 = config
            .flags
            .ffl1
            .then(|| dense_init(config.pooled_width(), config.h_ffl1, &mut rng));
        let ffl2 = config
            .flags
            .ffl2
            .then(|| dense_init(config.joint_width(), config.h_ffl2, &mut rng));
        let scorer = dense_init(config.scorer_width(), 1, &mut rng);
        Ok(ModelParams {
            config,
            word_embeddings,
            tag_embeddings,
            s_tag_id,
            n_tags,
            fw,
            bw,
            ffl1,
            ffl2,
            scorer,
        })
    }

    /// Trainable tensors with their names; biases are flagged `false`.
    pub fn trainable(&self) -> Vec<(String, &Tensor, bool)> {
        let mut out: Vec<(String, &Tensor, bool)> = Vec::new();
        if let Some(t) = &self.tag_embeddings {
            out.push(("tag_embeddings".into(), t, true));
        }
        for (dir, l) in [("fw", &self.fw), ("bw", &self.bw)] {
            out.push((format!("lstm.{dir}.w_ih"), &l.w_ih, true));
            out.push((format!("lstm.{dir}.w_hh"), &l.w_hh, true));
            out.push((format!("lstm.{dir}.b"), &l.b, false));
        }
        for (name, d) in [("ffl1", &self.ffl1), ("ffl2", &self.ffl2)] {
            if let Some(d) = d {
                out.push((format!("{name}.w"), &d.w, true));
                out.push((format!("{name}.b"), &d.b, false));
            }
        }
        out.push(("scorer.w".into(), &self.scorer.w, true));
        out.push(("scorer.b".into(), &self.scorer.b, false));
        out
    }

    /// Same order as [`ModelParams::trainable`].
    pub fn trainable_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        if let Some(t) = &mut self.tag_embeddings {
            out.push(t);
        }
        for l in [&mut self.fw, &mut self.bw] {
            out.push(&mut l.w_ih);
            out.push(&mut l.w_hh);
            out.push(&mut l.b);
        }
        for d in [&mut self.ffl1, &mut self.ffl2].into_iter().flatten() {
            out.push(&mut d.w);
            out.push(&mut d.b);
        }
        out.push(&mut self.scorer.w);
        out.push(&mut self.scorer.b);
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.trainable().iter().map(|(_, t, _)| t.len()).sum()
    }

    /// Puts the trainable tensors on a graph.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> ParamVars {
        let mut put = |t: &Tensor| if trainable { g.param(t.clone()) } else { g.constant(t.clone()) };
        let tag = self.tag_embeddings.as_ref().map(&mut put);
        let mut lstm = |l: &LstmParams| LstmVars {
            w_ih: put(&l.w_ih),
            w_hh: put(&l.w_hh),
            b: put(&l.b),
        };
        let fw = lstm(&self.fw);
        let bw = lstm(&self.bw);
        let mut dense = |d: &Dense| DenseVars { w: put(&d.w), b: put(&d.b) };
        let ffl1 = self.ffl1.as_ref().map(&mut dense);
        let ffl2 = self.ffl2.as_ref().map(&mut dense);
        let scorer = dense(&self.scorer);
        ParamVars {
            tag,
            fw,
            bw,
            ffl1,
            ffl2,
            scorer,
        }
    }

    pub fn word_vector(&self, id: usize) -> &[f64] {
        self.word_embeddings.row(id)
    }

    /// Anaphor context and head vectors of an instance.
    pub fn anaphor_vectors(&self, anaphs: &[usize], span: Span, head: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        let ctx = anaphor_context_vector(&self.word_embeddings, anaphs, span)?;
        let head_id = *anaphs
            .get(head)
            .ok_or_else(|| Error::contract(format!("anaphor head {head} outside sentence")))?;
        Ok((ctx, self.word_vector(head_id).to_vec()))
    }

    /// One composed word vector: word, then context and head blocks if
    /// enabled, then the tag block. Words of the anaphoric sentence use the
    /// `S` tag regardless of `tag_id`.
    pub fn compose_word_vector(&self, word_id: usize, ctx: &[f64], head: &[f64], tag_id: usize, is_anaphs: bool) -> Vec<f64> {
        let f = self.config.flags;
        let mut v = Vec::with_capacity(self.config.input_width());
        v.extend_from_slice(self.word_vector(word_id));
        if f.ctx {
            v.extend_from_slice(ctx);
        }
        if f.aa {
            v.extend_from_slice(head);
        }
        if f.tag {
            let tag = if is_anaphs { self.s_tag_id } else { tag_id };
            let table = self.tag_embeddings.as_ref().expect("tag table present when flag tag is on");
            v.extend_from_slice(table.row(tag.min(self.n_tags - 1)));
        }
        v
    }
}

/// Mean of the embeddings of the anaphoric phrase and of the words directly
/// before and after it; neighbours outside the sentence are left out.
pub fn anaphor_context_vector(embeddings: &Tensor, anaphs: &[usize], span: Span) -> Result<Vec<f64>> {
    if span.is_empty() || span.end > anaphs.len() {
        return Err(Error::contract(format!(
            "anaphor span {span} outside sentence of {} tokens",
            anaphs.len()
        )));
    }
    let lo = span.start.saturating_sub(1);
    let hi = (span.end + 1).min(anaphs.len());
    let mut out = vec![0.0; embeddings.cols()];
    for &id in &anaphs[lo..hi] {
        for (o, v) in out.iter_mut().zip(embeddings.row(id)) {
            *o += v;
        }
    }
    let n = (hi - lo) as f64;
    out.iter_mut().for_each(|v| *v /= n);
    Ok(out)
}

pub struct LstmVars {
    pub w_ih: Var,
    pub w_hh: Var,
    pub b: Var,
}

pub struct DenseVars {
    pub w: Var,
    pub b: Var,
}

pub struct ParamVars {
    pub tag: Option<Var>,
    pub fw: LstmVars,
    pub bw: LstmVars,
    pub ffl1: Option<DenseVars>,
    pub ffl2: Option<DenseVars>,
    pub scorer: DenseVars,
}

impl ParamVars {
    /// Matrices subject to weight decay (biases excluded).
    pub fn matrices(&self) -> Vec<Var> {
        let mut out: Vec<Var> = self.tag.into_iter().collect();
        out.extend([self.fw.w_ih, self.fw.w_hh, self.bw.w_ih, self.bw.w_hh]);
        out.extend(self.ffl1.iter().chain(&self.ffl2).map(|d| d.w));
        out.push(self.scorer.w);
        out
    }

    /// Same order as [`ModelParams::trainable`].
    pub fn all(&self) -> Vec<Var> {
        let mut out: Vec<Var> = self.tag.into_iter().collect();
        for l in [&self.fw, &self.bw] {
            out.extend([l.w_ih, l.w_hh, l.b]);
        }
        for d in self.ffl1.iter().chain(&self.ffl2) {
            out.extend([d.w, d.b]);
        }
        out.extend([self.scorer.w, self.scorer.b]);
        out
    }
}

/// Keep probabilities for dropout.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeepProbs {
    pub input: f64,
    pub lstm: f64,
    pub ffl1: f64,
    pub ffl2: f64,
}

impl Default for KeepProbs {
    fn default() -> Self {
        KeepProbs {
            input: 1.0,
            lstm: 0.8,
            ffl1: 0.8,
            ffl2: 0.8,
        }
    }
}

impl KeepProbs {
    pub fn none() -> Self {
        KeepProbs {
            input: 1.0,
            lstm: 1.0,
            ffl1: 1.0,
            ffl2: 1.0,
        }
    }
}

/// Dropout setting for one forward pass; `None` means evaluation mode.
pub type Dropout<'a> = Option<(KeepProbs, &'a mut ChaCha8Rng)>;

fn apply_dropout(g: &mut Graph, x: Var, keep: f64, dropout: &mut Dropout<'_>) -> Var {
    match dropout {
        Some((_, rng)) => g.dropout(x, keep, &mut **rng, true),
        None => x,
    }
}

/// A sequence to encode.
#[derive(Clone, Copy, Debug)]
pub struct SeqInput<'a> {
    pub words: &'a [usize],
    pub ctx: &'a [f64],
    pub head: &'a [f64],
    pub tag: usize,
}

/// Graph nodes of a batch of encoded sequences.
pub struct Encoded {
    /// Masked mean of `[backward; forward]` outputs, plus the shortcut.
    pub pooled: Var,
    /// After the first ELU layer (or `pooled`).
    pub seq: Var,
}

/// Runs the shared bi-LSTM over a padded batch of sequences.
///
/// Positions holding the padding id are masked: their hidden and cell states
/// are zeroed, so padding never influences real positions, and they are
/// excluded from the average.
pub fn encode(
    g: &mut Graph,
    p: &ModelParams,
    vars: &ParamVars,
    seqs: &[SeqInput<'_>],
    dropout: &mut Dropout<'_>,
) -> Result<Encoded> {
    let (steps_f, steps_b, mask) = bilstm_steps(g, p, vars, seqs, dropout)?;
    let pooled_f = g.mean_steps(&steps_f, &mask)?;
    let pooled_b = g.mean_steps(&steps_b, &mask)?;
    let mut parts = vec![pooled_b, pooled_f];
    if p.config.flags.cut {
        let tags: Vec<usize> = seqs.iter().map(|s| s.tag.min(p.n_tags - 1)).collect();
        parts.push(g.gather_rows(vars.tag.expect("tag table"), &tags)?);
    }
    let pooled = g.concat(&parts, 1)?;
    let seq = match &vars.ffl1 {
        Some(d) => {
            let z = g.matmul(pooled, d.w)?;
            let z = g.add_bias(z, d.b)?;
            let a = g.elu(z);
            let keep = dropout.as_ref().map_or(1.0, |(k, _)| k.ffl1);
            apply_dropout(g, a, keep, dropout)
        }
        None => pooled,
    };
    Ok(Encoded { pooled, seq })
}

/// Per-step outputs of both directions (index = position) and the mask.
pub fn bilstm_steps(
    g: &mut Graph,
    p: &ModelParams,
    vars: &ParamVars,
    seqs: &[SeqInput<'_>],
    dropout: &mut Dropout<'_>,
) -> Result<(Vec<Var>, Vec<Var>, Tensor)> {
    let cfg = &p.config;
    let b = seqs.len();
    if b == 0 {
        return Err(Error::contract("encoding an empty batch"));
    }
    let t_max = seqs.iter().map(|s| s.words.len()).max().unwrap_or(0);
    if t_max == 0 {
        return Err(Error::contract("sequence of length 0"));
    }
    let wb = cfg.word_block_width();
    let mut mask = Tensor::zeros(&[b, t_max]);
    let mut words = vec![0.0; t_max * b * wb];
    let mut tag_ids = Vec::with_capacity(t_max * b);
    for t in 0..t_max {
        for (r, s) in seqs.iter().enumerate() {
            let id = s.words.get(t).copied().unwrap_or(PAD_ID);
            tag_ids.push(s.tag.min(p.n_tags - 1));
            if id == PAD_ID {
                continue;
            }
            mask.data_mut()[r * t_max + t] = 1.0;
            let row = &mut words[(t * b + r) * wb..(t * b + r + 1) * wb];
            let d = cfg.d_word;
            row[..d].copy_from_slice(p.word_vector(id));
            let mut off = d;
            if cfg.flags.ctx {
                row[off..off + d].copy_from_slice(s.ctx);
                off += d;
            }
            if cfg.flags.aa {
                row[off..off + d].copy_from_slice(s.head);
            }
        }
    }
    let mut x = g.constant(Tensor::matrix(t_max * b, wb, words));
    if cfg.flags.tag {
        let tags = g.gather_rows(vars.tag.expect("tag table"), &tag_ids)?;
        x = g.concat(&[x, tags], 1)?;
    }
    let keep_in = dropout.as_ref().map_or(1.0, |(k, _)| k.input);
    x = apply_dropout(g, x, keep_in, dropout);
    let keep_lstm = dropout.as_ref().map_or(1.0, |(k, _)| k.lstm);

    let run = |g: &mut Graph, l: &LstmVars, order: Vec<usize>, dropout: &mut Dropout<'_>| -> Result<Vec<Var>> {
        let h = cfg.h_lstm;
        let xw = g.matmul(x, l.w_ih)?;
        let mut hs = g.constant(Tensor::zeros(&[b, h]));
        let mut cs = g.constant(Tensor::zeros(&[b, h]));
        let mut outs = vec![hs; t_max];
        for t in order {
            let m: Vec<f64> = (0..b).map(|r| mask.get(r, t)).collect();
            let xt = g.slice_rows(xw, t * b, (t + 1) * b)?;
            let hw = g.matmul(hs, l.w_hh)?;
            let z = g.add(xt, hw)?;
            let z = g.add_bias(z, l.b)?;
            let zi = g.slice_cols(z, 0, h)?;
            let zf = g.slice_cols(z, h, 2 * h)?;
            let zo = g.slice_cols(z, 2 * h, 3 * h)?;
            let zg = g.slice_cols(z, 3 * h, 4 * h)?;
            let i = g.sigmoid(zi);
            let f = g.sigmoid(zf);
            let o = g.sigmoid(zo);
            let cand = g.tanh(zg);
            let keep_old = g.mul(f, cs)?;
            let write = g.mul(i, cand)?;
            let c = g.add(keep_old, write)?;
            let c = g.scale_rows(c, &m)?;
            let tc = g.tanh(c);
            let hn = g.mul(o, tc)?;
            let hn = g.scale_rows(hn, &m)?;
            outs[t] = apply_dropout(g, hn, keep_lstm, dropout);
            hs = hn;
            cs = c;
        }
        Ok(outs)
    };
    let fwd = run(g, &vars.fw, (0..t_max).collect(), dropout)?;
    let bwd = run(g, &vars.bw, (0..t_max).rev().collect(), dropout)?;
    Ok((fwd, bwd, mask))
}

/// `[|c - s|; c * s]`, row by row.
pub fn joint(g: &mut Graph, c: Var, s: Var) -> Result<Var> {
    let d = g.abs_diff(c, s)?;
    let m = g.mul(c, s)?;
    g.concat(&[d, m], 1)
}

/// An instance mapped to ids and precomputed anaphor vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedInstance {
    pub id: String,
    pub kind: AnaphorKind,
    pub anaphs: Vec<usize>,
    pub ctx: Vec<f64>,
    pub head: Vec<f64>,
    pub candidates: Vec<PreparedCandidate>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PreparedCandidate {
    pub words: Vec<usize>,
    pub tag: usize,
    pub positive: bool,
}

impl PreparedInstance {
    pub fn new(inst: &AnaphoraInstance, vocab: &Vocabulary, params: &ModelParams) -> Result<Self> {
        let anaphs = vocab.encode(&inst.anaphs);
        let (ctx, head) = params.anaphor_vectors(&anaphs, inst.anaphor_span, inst.anaphor_head)?;
        let candidates = inst
            .candidates
            .iter()
            .map(|c| PreparedCandidate {
                words: vocab.encode(&c.tokens),
                tag: vocab.tag_id(&c.tag),
                positive: c.is_positive(),
            })
            .collect();
        Ok(PreparedInstance {
            id: inst.id.clone(),
            kind: inst.kind,
            anaphs,
            ctx,
            head,
            candidates,
        })
    }

    pub fn positives(&self) -> Vec<usize> {
        (0..self.candidates.len()).filter(|&i| self.candidates[i].positive).collect()
    }

    pub fn negatives(&self) -> Vec<usize> {
        (0..self.candidates.len()).filter(|&i| !self.candidates[i].positive).collect()
    }
}

/// Graph nodes of a scored batch.
pub struct BatchOutput {
    pub encoded: Encoded,
    /// Row of the encoded sequences holding each instance's sentence.
    pub sentence_rows: Vec<usize>,
    /// Per instance, the range of its candidates in `scores`.
    pub candidate_ranges: Vec<std::ops::Range<usize>>,
    pub joint: Var,
    /// After the second ELU layer (or `joint`).
    pub joint_out: Var,
    /// One score per candidate, as an `N x 1` column.
    pub scores: Var,
}

/// Scores every candidate of every instance. Each anaphoric sentence is
/// encoded once and shared by its candidates.
pub fn forward(
    g: &mut Graph,
    p: &ModelParams,
    vars: &ParamVars,
    batch: &[&PreparedInstance],
    dropout: &mut Dropout<'_>,
) -> Result<BatchOutput> {
    let mut seqs = Vec::new();
    let mut sentence_rows = Vec::new();
    let mut cand_rows = Vec::new();
    let mut sent_of_cand = Vec::new();
    let mut candidate_ranges = Vec::new();
    for inst in batch {
        if inst.candidates.is_empty() {
            return Err(Error::contract(format!("{}: no candidates", inst.id)));
        }
        let s_row = seqs.len();
        sentence_rows.push(s_row);
        seqs.push(SeqInput {
            words: &inst.anaphs,
            ctx: &inst.ctx,
            head: &inst.head,
            tag: p.s_tag_id,
        });
        let start = cand_rows.len();
        for c in &inst.candidates {
            cand_rows.push(seqs.len());
            sent_of_cand.push(s_row);
            seqs.push(SeqInput {
                words: &c.words,
                ctx: &inst.ctx,
                head: &inst.head,
                tag: c.tag,
            });
        }
        candidate_ranges.push(start..cand_rows.len());
    }
    let encoded = encode(g, p, vars, &seqs, dropout)?;
    let hc = g.gather_rows(encoded.seq, &cand_rows)?;
    let hs = g.gather_rows(encoded.seq, &sent_of_cand)?;
    let j = joint(g, hc, hs)?;
    let joint_out = match &vars.ffl2 {
        Some(d) => {
            let z = g.matmul(j, d.w)?;
            let z = g.add_bias(z, d.b)?;
            let a = g.elu(z);
            let keep = dropout.as_ref().map_or(1.0, |(k, _)| k.ffl2);
            apply_dropout(g, a, keep, dropout)
        }
        None => j,
    };
    let s = g.matmul(joint_out, vars.scorer.w)?;
    let scores = g.add_bias(s, vars.scorer.b)?;
    Ok(BatchOutput {
        encoded,
        sentence_rows,
        candidate_ranges,
        joint: j,
        joint_out,
        scores,
    })
}

/// Evaluation-mode scores of one instance's candidates.
pub fn score_instance(p: &ModelParams, inst: &PreparedInstance) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let vars = p.bind(&mut g, false);
    let out = forward(&mut g, p, &vars, &[inst], &mut None)?;
    Ok(g.value(out.scores).data().to_vec())
}

/// All intermediate vectors of one candidate / sentence pair.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedPair {
    pub h_s: Vec<f64>,
    pub h_c: Vec<f64>,
    pub h_tilde_s: Vec<f64>,
    pub h_tilde_c: Vec<f64>,
    pub h_cs: Vec<f64>,
    pub h_tilde_cs: Vec<f64>,
    pub score: f64,
}

/// Evaluation-mode encoding of every candidate of an instance.
pub fn encode_pairs(p: &ModelParams, inst: &PreparedInstance) -> Result<Vec<EncodedPair>> {
    let mut g = Graph::new();
    let vars = p.bind(&mut g, false);
    let out = forward(&mut g, p, &vars, &[inst], &mut None)?;
    let pooled = g.value(out.encoded.pooled);
    let seq = g.value(out.encoded.seq);
    let s_row = out.sentence_rows[0];
    Ok((0..inst.candidates.len())
        .map(|k| EncodedPair {
            h_s: pooled.row(s_row).to_vec(),
            h_c: pooled.row(s_row + 1 + k).to_vec(),
            h_tilde_s: seq.row(s_row).to_vec(),
            h_tilde_c: seq.row(s_row + 1 + k).to_vec(),
            h_cs: g.value(out.joint).row(k).to_vec(),
            h_tilde_cs: g.value(out.joint_out).row(k).to_vec(),
            score: g.value(out.scores).data()[k],
        })
        .collect())
}

/// Evaluation-mode bi-LSTM outputs `[backward; forward]` for every position
/// of a single sequence.
pub fn sequence_outputs(p: &ModelParams, seq: SeqInput<'_>) -> Result<Vec<Vec<f64>>> {
    let mut g = Graph::new();
    let vars = p.bind(&mut g, false);
    let (fwd, bwd, _) = bilstm_steps(&mut g, p, &vars, &[seq], &mut None)?;
    Ok(fwd
        .iter()
        .zip(&bwd)
        .map(|(&f, &b)| {
            let mut v = g.value(b).data().to_vec();
            v.extend_from_slice(g.value(f).data());
            v
        })
        .collect())
}

/// Parameters together with the vocabulary they were trained with.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub params: ModelParams,
    pub vocab: Vocabulary,
}

#[derive(Serialize, Deserialize)]
struct ModelMeta {
    config: ModelConfig,
    n_tags: usize,
    s_tag_id: usize,
}

pub const PARAMS_FILE: &str = "params.bin";
pub const PARAMS_MANIFEST: &str = "params.json";
pub const MODEL_FILE: &str = "model.json";
pub const VOCAB_FILE: &str = "vocab.json";

impl Model {
    pub fn new(config: ModelConfig, vocab: Vocabulary, word_embeddings: Tensor, seed: u64) -> Result<Self> {
        if word_embeddings.rows() != vocab.len() {
            return Err(Error::contract(format!(
                "{} embedding rows for {} words",
                word_embeddings.rows(),
                vocab.len()
            )));
        }
        let s_tag = vocab.tag_id("S");
        let params = ModelParams::init(config, word_embeddings, vocab.n_tags(), s_tag, seed)?;
        Ok(Model { params, vocab })
    }

    pub fn prepare(&self, inst: &AnaphoraInstance) -> Result<PreparedInstance> {
        PreparedInstance::new(inst, &self.vocab, &self.params)
    }

    fn named_tensors(&self) -> Vec<(String, Tensor)> {
        let mut out = vec![("word_embeddings".to_string(), self.params.word_embeddings.clone())];
        out.extend(self.params.trainable().into_iter().map(|(n, t, _)| (n, t.clone())));
        out
    }

    /// Writes `model.json`, `vocab.json`, `params.bin` and `params.json`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let meta = ModelMeta {
            config: self.params.config,
            n_tags: self.params.n_tags,
            s_tag_id: self.params.s_tag_id,
        };
        fs::write(dir.join(MODEL_FILE), serde_json::to_string_pretty(&meta)?)?;
        fs::write(dir.join(VOCAB_FILE), serde_json::to_string(&self.vocab)?)?;
        let tensors = self.named_tensors();
        let mut buf = Vec::new();
        write_tensors(&mut buf, &tensors)?;
        fs::write(dir.join(PARAMS_FILE), buf)?;
        fs::write(
            dir.join(PARAMS_MANIFEST),
            serde_json::to_string_pretty(&CheckpointManifest::describe(&tensors))?,
        )?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta: ModelMeta = serde_json::from_reader(BufReader::new(fs::File::open(dir.join(MODEL_FILE))?))?;
        let vocab: Vocabulary = serde_json::from_reader(BufReader::new(fs::File::open(dir.join(VOCAB_FILE))?))?;
        let tensors = read_tensors(BufReader::new(fs::File::open(dir.join(PARAMS_FILE))?))?;
        let mut it = tensors.into_iter();
        let (name, emb) = it
            .next()
            .ok_or_else(|| Error::Checkpoint("no tensors".into()))?;
        if name != "word_embeddings" {
            return Err(Error::Checkpoint(format!("expected word_embeddings, found {name}")));
        }
        let mut params = ModelParams::init(meta.config, emb, meta.n_tags, meta.s_tag_id, 0)?;
        let names: Vec<(String, Vec<usize>)> = params
            .trainable()
            .iter()
            .map(|(n, t, _)| (n.clone(), t.shape().to_vec()))
            .collect();
        for ((want, shape), slot) in names.into_iter().zip(params.trainable_mut()) {
            let (name, t) = it
                .next()
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {want}")))?;
            if name != want || t.shape() != shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "expected {want} {shape:?}, found {name} {:?}",
                    t.shape()
                )));
            }
            *slot = t;
        }
        if let Some((name, _)) = it.next() {
            return Err(Error::Checkpoint(format!("unexpected tensor {name}")));
        }
        Ok(Model { params, vocab })
    }
}
