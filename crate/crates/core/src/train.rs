//! Max-margin training.

use std::collections::BTreeMap;
use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{AnaphoraInstance, MatchMode};
use crate::datagen::derive_seed;
use crate::eval;
use crate::model::{self, KeepProbs, Model, ModelParams, PreparedInstance};
use crate::tensor::{Graph, Tensor, Var};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_batch_size: usize,
    pub epochs: usize,
    /// Global gradient norm bound; `f64::INFINITY` disables clipping.
    pub clip_norm: f64,
    pub l2_lambda: f64,
    pub keep: KeepProbs,
    /// Minimum training-set frequency for a word to get its own id.
    pub min_word_freq: f64,
    pub seed: u64,
    pub shuffle: bool,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            max_batch_size: 64,
            epochs: 10,
            clip_norm: 1.0,
            l2_lambda: 1e-5,
            keep: KeepProbs::default(),
            min_word_freq: 3.0,
            seed: 0,
            shuffle: true,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let k = self.keep;
        for (name, p) in [("k_input", k.input), ("k_lstm", k.lstm), ("k_ffl1", k.ffl1), ("k_ffl2", k.ffl2)] {
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::Config(format!("{name} = {p} is not in (0, 1]")));
            }
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.max_batch_size == 0 {
            return Err(Error::Config("max_batch_size must be at least 1".into()));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::Config("clip_norm must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || self.l2_lambda < 0.0 {
            return Err(Error::Config("learning_rate must be positive and l2_lambda non-negative".into()));
        }
        Ok(())
    }
}

/// Hinge loss of one instance: `max(0, 1 + max(neg) - max(pos))`; zero when
/// there are no negatives.
pub fn margin_loss(positive: &[f64], negative: &[f64]) -> Result<f64> {
    let max = |xs: &[f64]| xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if positive.is_empty() {
        return Err(Error::contract("margin loss without a positive candidate"));
    }
    if negative.is_empty() {
        return Ok(0.0);
    }
    Ok((1.0 + max(negative) - max(positive)).max(0.0))
}

/// Sum of the instance hinge losses over a batch, on the graph. `scores` is
/// the column of candidate scores, `ranges` the candidate range of each
/// instance.
pub fn margin_loss_graph(
    g: &mut Graph,
    scores: Var,
    batch: &[&PreparedInstance],
    ranges: &[std::ops::Range<usize>],
) -> Result<Var> {
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for (inst, range) in batch.iter().zip(ranges) {
        let p: Vec<usize> = inst.positives().into_iter().map(|i| range.start + i).collect();
        let n: Vec<usize> = inst.negatives().into_iter().map(|i| range.start + i).collect();
        if p.is_empty() {
            return Err(Error::contract(format!("{}: no positive candidate", inst.id)));
        }
        if !n.is_empty() {
            pos.push(p);
            neg.push(n);
        }
    }
    if pos.is_empty() {
        return Ok(g.constant(Tensor::scalar(0.0)));
    }
    let best_pos = g.segment_max(scores, &pos)?;
    let best_neg = g.segment_max(scores, &neg)?;
    let gap = g.sub(best_neg, best_pos)?;
    let gap = g.add_scalar(gap, 1.0);
    let hinge = g.relu(gap);
    Ok(g.sum(hinge))
}

/// Groups instance indices by `(n_pos, n_neg)` and cuts each group into
/// batches of at most `max_batch_size`, keeping input order. With `shuffle`
/// the order of the batches is permuted by `seed`; their contents are not.
pub fn make_batches(signatures: &[(usize, usize)], max_batch_size: usize, seed: u64, shuffle: bool) -> Vec<Vec<usize>> {
    let mut groups: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for (i, &sig) in signatures.iter().enumerate() {
        groups.entry(sig).or_default().push(i);
    }
    let mut batches: Vec<Vec<usize>> = groups
        .into_values()
        .flat_map(|idx| idx.chunks(max_batch_size.max(1)).map(<[usize]>::to_vec).collect::<Vec<_>>())
        .collect();
    if shuffle {
        batches.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    batches
}

/// Joint L2 norm of all gradients.
pub fn global_norm(grads: &[Tensor]) -> f64 {
    grads.iter().map(Tensor::sum_squares).sum::<f64>().sqrt()
}

/// Scales all gradients by `max_norm / N` when their joint norm `N` exceeds
/// `max_norm`. Returns `N`.
pub fn global_norm_clip(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm && norm.is_finite() {
        let f = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= f);
        }
    }
    norm
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let sizes: Vec<usize> = params.into_iter().map(Tensor::len).collect();
        AdamState {
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn from_train(cfg: &TrainConfig) -> Self {
        AdamConfig {
            lr: cfg.learning_rate,
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            eps: cfg.adam_eps,
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(params: &mut [&mut Tensor], grads: &[Tensor], state: &mut AdamState, cfg: AdamConfig) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::contract(format!(
            "adam: {} parameters, {} gradients, {} state slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        if p.len() != g.len() {
            return Err(Error::Shape {
                op: "adam_step",
                left: p.shape().to_vec(),
                right: g.shape().to_vec(),
            });
        }
        let (m, v) = (&mut state.m[k], &mut state.v[k]);
        for (i, (w, &gi)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            *w -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

/// Loss and gradients of one batch. Dropout is active when `rng` is given.
pub fn loss_and_gradients(
    params: &ModelParams,
    batch: &[&PreparedInstance],
    keep: KeepProbs,
    l2_lambda: f64,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<(f64, f64, Vec<Tensor>)> {
    let mut g = Graph::new();
    let vars = params.bind(&mut g, true);
    let mut dropout = rng.map(|r| (keep, r));
    let out = model::forward(&mut g, params, &vars, batch, &mut dropout)?;
    let margin = margin_loss_graph(&mut g, out.scores, batch, &out.candidate_ranges)?;
    let penalty = g.l2_penalty(&vars.matrices(), l2_lambda)?;
    let loss = g.add(margin, penalty)?;
    g.backward(loss)?;
    let grads = vars
        .all()
        .into_iter()
        .map(|v| g.grad(v).unwrap_or_else(|| Tensor::zeros(g.value(v).shape())))
        .collect();
    Ok((g.value(loss).item(), g.value(margin).item(), grads))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean hinge loss per training instance, without the L2 term.
    pub train_loss: f64,
    pub dev_s1: f64,
    pub wall_time: f64,
}

pub fn write_epoch_log<W: Write>(mut w: W, log: &[EpochLog]) -> Result<()> {
    writeln!(w, "epoch\ttrain_loss\tdev_s@1\twall_time")?;
    for e in log {
        writeln!(w, "{}\t{:.6}\t{:.4}\t{:.3}", e.epoch, e.train_loss, e.dev_s1, e.wall_time)?;
    }
    Ok(())
}

pub struct FitResult {
    pub best: Model,
    /// 1-based.
    pub best_epoch: usize,
    pub log: Vec<EpochLog>,
}

/// Index of the best dev score; ties go to the earlier epoch.
pub fn select_epoch(dev_scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in dev_scores.iter().enumerate() {
        if best.is_none_or(|b| s > dev_scores[b]) {
            best = Some(i);
        }
    }
    best
}

/// Trains for `cfg.epochs` epochs and keeps the parameters with the best
/// dev s@1. `on_epoch` sees each log line as it is produced.
pub fn fit(
    mut model: Model,
    train: &[AnaphoraInstance],
    dev: &[AnaphoraInstance],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<FitResult> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyInput);
    }
    let prepared: Vec<PreparedInstance> = train.iter().map(|i| model.prepare(i)).collect::<Result<_>>()?;
    if let Some(bad) = prepared.iter().find(|p| p.positives().is_empty()) {
        return Err(Error::contract(format!("training instance {} has no positive candidate", bad.id)));
    }
    let signatures: Vec<(usize, usize)> = train.iter().map(AnaphoraInstance::signature).collect();
    let mut adam = AdamState::new(model.params.trainable().into_iter().map(|(_, t, _)| t));
    let adam_cfg = AdamConfig::from_train(cfg);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "dropout", 0, 0));
    let start = Instant::now();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, ModelParams)> = None;

    for epoch in 1..=cfg.epochs {
        let batches = make_batches(
            &signatures,
            cfg.max_batch_size,
            derive_seed(cfg.seed, "batches", epoch, 0),
            cfg.shuffle,
        );
        let mut total = 0.0;
        for batch in batches {
            let refs: Vec<&PreparedInstance> = batch.iter().map(|&i| &prepared[i]).collect();
            let (_, margin, mut grads) =
                loss_and_gradients(&model.params, &refs, cfg.keep, cfg.l2_lambda, Some(&mut dropout_rng))?;
            total += margin;
            if cfg.clip_norm.is_finite() {
                global_norm_clip(&mut grads, cfg.clip_norm);
            }
            adam_step(&mut model.params.trainable_mut(), &grads, &mut adam, adam_cfg)?;
        }
        let dev_s1 = if dev.is_empty() {
            0.0
        } else {
            eval::evaluate(&model, dev, MatchMode::Lenient)?.overall().s[0]
        };
        let entry = EpochLog {
            epoch,
            train_loss: total / train.len() as f64,
            dev_s1,
            wall_time: start.elapsed().as_secs_f64(),
        };
        on_epoch(&entry);
        if best.as_ref().is_none_or(|(_, s, _)| dev_s1 > *s) {
            best = Some((epoch, dev_s1, model.params.clone()));
        }
        log.push(entry);
    }
    let (best_epoch, _, params) = best.expect("at least one epoch");
    Ok(FitResult {
        best: Model {
            params,
            vocab: model.vocab,
        },
        best_epoch,
        log,
    })
}
