//! Finite-difference checks of the analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::AnaphorKind;
use crate::model::{KeepProbs, ModelConfig, ModelParams, PreparedCandidate, PreparedInstance};
use crate::tensor::{init_normal, Graph, Tensor, Var};
use crate::treebank::Span;
use crate::train::loss_and_gradients;
use crate::Result;

/// Central-difference step.
pub const STEP: f64 = 1e-6;
/// Gradients smaller than this are compared absolutely.
pub const FLOOR: f64 = 1e-2;

/// `|a - n| / max(|a|, |n|, FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

/// Worst relative error of `d/dx sum(w * f(x))` over every input entry,
/// with `w` a fixed weight tensor shaped like the output of `build`.
pub fn check_op<F>(inputs: &[Tensor], weights: impl Fn(&[usize]) -> Tensor, build: F) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor], w: Option<&Tensor>| -> Result<(f64, Vec<Option<Tensor>>, Tensor)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|x| g.param(x.clone())).collect();
        let out = build(&mut g, &vars)?;
        let w = match w {
            Some(w) => w.clone(),
            None => weights(g.value(out).shape()),
        };
        let wv = g.constant(w.clone());
        let prod = g.mul(out, wv)?;
        let loss = g.sum(prod);
        g.backward(loss)?;
        let grads = vars.iter().map(|&v| g.grad(v)).collect();
        Ok((g.value(loss).item(), grads, w))
    };
    let (_, grads, w) = eval(inputs, None)?;
    let mut worst: f64 = 0.0;
    for (k, x) in inputs.iter().enumerate() {
        let analytic = grads[k].clone().unwrap_or_else(|| Tensor::zeros(x.shape()));
        for i in 0..x.len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += STEP;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= STEP;
            let numeric = (eval(&plus, Some(&w))?.0 - eval(&minus, Some(&w))?.0) / (2.0 * STEP);
            worst = worst.max(relative_error(analytic.data()[i], numeric));
        }
    }
    Ok(worst)
}

/// Worst relative error of the gradient of the full training loss (margin
/// plus L2, no dropout) over every trainable parameter entry. Also returns
/// the margin part of the loss, which must be positive for the check to say
/// anything about the scorer.
pub fn check_model(params: &ModelParams, batch: &[&PreparedInstance], l2_lambda: f64) -> Result<(f64, f64)> {
    let mut p = params.clone();
    let keep = KeepProbs::none();
    let (_, margin, grads) = loss_and_gradients(&p, batch, keep, l2_lambda, None)?;
    let mut worst: f64 = 0.0;
    for (k, grad) in grads.iter().enumerate() {
        for i in 0..grad.len() {
            let orig = p.trainable_mut()[k].data()[i];
            p.trainable_mut()[k].data_mut()[i] = orig + STEP;
            let up = loss_and_gradients(&p, batch, keep, l2_lambda, None)?.0;
            p.trainable_mut()[k].data_mut()[i] = orig - STEP;
            let down = loss_and_gradients(&p, batch, keep, l2_lambda, None)?.0;
            p.trainable_mut()[k].data_mut()[i] = orig;
            worst = worst.max(relative_error(grad.data()[i], (up - down) / (2.0 * STEP)));
        }
    }
    Ok((worst, margin))
}

/// Random entries with magnitude in `[gap, 1.5)`, so that kinks at zero stay
/// outside the difference stencil.
pub fn away_from_zero(shape: &[usize], gap: f64, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v: f64 = rng.random_range(gap..1.5);
            if rng.random_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}

type OpBuilder = Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>;

fn ops() -> Vec<(&'static str, Vec<Tensor>, OpBuilder)> {
    let r = |shape: &[usize], seed| away_from_zero(shape, 0.05, seed);
    let steps_mask = Tensor::from_rows(&[vec![1.0, 1.0, 1.0], vec![1.0, 0.0, 0.0]]).expect("rectangular");
    vec![
        ("matmul", vec![r(&[3, 4], 1), r(&[4, 2], 2)], Box::new(|g, v| g.matmul(v[0], v[1]))),
        ("add", vec![r(&[3, 4], 1), r(&[3, 4], 2)], Box::new(|g, v| g.add(v[0], v[1]))),
        ("sub", vec![r(&[3, 4], 1), r(&[3, 4], 2)], Box::new(|g, v| g.sub(v[0], v[1]))),
        ("mul", vec![r(&[3, 4], 1), r(&[3, 4], 2)], Box::new(|g, v| g.mul(v[0], v[1]))),
        ("abs_diff", vec![r(&[3, 4], 1), r(&[3, 4], 2)], Box::new(|g, v| g.abs_diff(v[0], v[1]))),
        ("add_bias", vec![r(&[3, 4], 1), r(&[4], 2)], Box::new(|g, v| g.add_bias(v[0], v[1]))),
        ("concat rows", vec![r(&[2, 3], 1), r(&[1, 3], 2)], Box::new(|g, v| g.concat(v, 0))),
        ("concat cols", vec![r(&[2, 3], 1), r(&[2, 2], 2)], Box::new(|g, v| g.concat(v, 1))),
        ("slice_rows", vec![r(&[4, 3], 1)], Box::new(|g, v| g.slice_rows(v[0], 1, 3))),
        ("slice_cols", vec![r(&[4, 3], 1)], Box::new(|g, v| g.slice_cols(v[0], 0, 2))),
        ("gather_rows", vec![r(&[4, 3], 1)], Box::new(|g, v| g.gather_rows(v[0], &[2, 0, 2, 3]))),
        (
            "masked_mean rows",
            vec![r(&[4, 3], 1)],
            Box::new(|g, v| g.masked_mean(v[0], &[1.0, 0.0, 1.0, 1.0], 0)),
        ),
        (
            "masked_mean cols",
            vec![r(&[4, 3], 1)],
            Box::new(|g, v| g.masked_mean(v[0], &[0.0, 1.0, 1.0], 1)),
        ),
        (
            "mean_steps",
            vec![r(&[2, 3], 1), r(&[2, 3], 2), r(&[2, 3], 3)],
            Box::new(move |g, v| g.mean_steps(v, &steps_mask)),
        ),
        (
            "segment_max",
            vec![r(&[2, 4], 1)],
            Box::new(|g, v| g.segment_max(v[0], &[vec![0, 1, 2], vec![3, 7], vec![5]])),
        ),
        ("max_all", vec![r(&[3, 3], 1)], Box::new(|g, v| g.max_all(v[0]))),
        ("elu", vec![r(&[3, 4], 1)], Box::new(|g, v| Ok(g.elu(v[0])))),
        ("sigmoid", vec![r(&[3, 4], 1)], Box::new(|g, v| Ok(g.sigmoid(v[0])))),
        ("tanh", vec![r(&[3, 4], 1)], Box::new(|g, v| Ok(g.tanh(v[0])))),
        ("relu", vec![r(&[3, 4], 1)], Box::new(|g, v| Ok(g.relu(v[0])))),
        ("scale", vec![r(&[3, 4], 1)], Box::new(|g, v| Ok(g.scale(v[0], -2.5)))),
        ("add_scalar", vec![r(&[3, 4], 1)], Box::new(|g, v| Ok(g.add_scalar(v[0], 0.75)))),
        (
            "scale_rows",
            vec![r(&[3, 4], 1)],
            Box::new(|g, v| g.scale_rows(v[0], &[0.5, -1.0, 2.0])),
        ),
        (
            "dropout",
            vec![r(&[3, 4], 1)],
            Box::new(|g, v| Ok(g.dropout(v[0], 0.7, &mut ChaCha8Rng::seed_from_u64(5), true))),
        ),
        ("sum", vec![r(&[3, 4], 1)], Box::new(|g, v| Ok(g.sum(v[0])))),
        ("sum_squares", vec![r(&[3, 4], 1)], Box::new(|g, v| Ok(g.sum_squares(v[0])))),
        ("l2_penalty", vec![r(&[3, 4], 1), r(&[2, 2], 2)], Box::new(|g, v| g.l2_penalty(v, 0.3))),
    ]
}

/// Every differentiable graph operation with its worst relative error.
pub fn op_suite() -> Result<Vec<(&'static str, f64)>> {
    ops()
        .into_iter()
        .map(|(name, inputs, build)| {
            let err = check_op(&inputs, |shape| away_from_zero(shape, 0.1, 7), build)?;
            Ok((name, err))
        })
        .collect()
}

/// Model of the given shape over a 12-word vocabulary and 6 tags; word 0 is
/// padding.
pub fn tiny_model(config: ModelConfig, seed: u64) -> Result<ModelParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut emb = init_normal(0.5, &[12, config.d_word], &mut rng);
    emb.data_mut()[..config.d_word].iter_mut().for_each(|v| *v = 0.0);
    ModelParams::init(config, emb, 6, 2, seed)
}

/// `n` random instances of `k` candidates each; candidate `i % k` of
/// instance `i` is the positive one.
pub fn tiny_batch(p: &ModelParams, n: usize, k: usize, seed: u64) -> Result<Vec<PreparedInstance>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocab = p.word_embeddings.rows();
    (0..n)
        .map(|i| {
            let len = rng.random_range(4..7);
            let anaphs: Vec<usize> = (0..len).map(|_| rng.random_range(1..vocab)).collect();
            let (ctx, head) = p.anaphor_vectors(&anaphs, Span::new(1, 2), 1)?;
            let candidates = (0..k)
                .map(|c| PreparedCandidate {
                    words: (0..rng.random_range(1..5)).map(|_| rng.random_range(1..vocab)).collect(),
                    tag: rng.random_range(0..p.n_tags),
                    positive: c == i % k,
                })
                .collect();
            Ok(PreparedInstance {
                id: format!("i{i}"),
                kind: AnaphorKind::Pronominal,
                anaphs,
                ctx,
                head,
                candidates,
            })
        })
        .collect()
}
