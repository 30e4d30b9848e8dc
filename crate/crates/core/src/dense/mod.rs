//! Dense retrieval: dual encoders with bilinear or multi-channel scoring,
//! locally normalized contrastive training and exact top-k retrieval.

mod model;
mod negatives;

pub use model::{
    score_bilinear, score_multichannel, DrConfig, DrModel, Encoder, ProjectionHead, ProjectionInit,
    Side,
};
pub use negatives::{sample_negatives, NegativeDraw, NegativeKind, NegativePolicy};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::inputs::{Inputs, Item, TrainingData};
use crate::numerics::{dot, logsumexp_unchecked, Gradients, Matrix, Parameterized, RandomStream};

/// Local softmax loss over the candidate multiset `{d⁺} ∪ negatives`:
/// `−s⁺/τ + log Σ_j exp(s_j/τ)`, with gradients for every touched parameter.
pub fn local_softmax_loss(
    model: &DrModel,
    query: Item<'_>,
    positive: Item<'_>,
    negatives: &[Item<'_>],
) -> Result<(f64, Gradients)> {
    if negatives.is_empty() {
        return Err(LabError::domain(
            "local softmax needs at least one negative",
        ));
    }
    let tau = model.temperature();
    let q = model.trace(Side::Query, query)?;
    let candidates: Vec<Item<'_>> = std::iter::once(positive)
        .chain(negatives.iter().copied())
        .collect();
    let traces = candidates
        .iter()
        .map(|&c| model.trace(Side::Doc, c))
        .collect::<Result<Vec<_>>>()?;
    let logits: Vec<f64> = traces.iter().map(|t| dot(&q.out, &t.out) / tau).collect();
    let lse = logsumexp_unchecked(&logits);
    let loss = lse - logits[0];

    let mut grads = Gradients::new();
    let mut dq = vec![0.0; q.out.len()];
    let mut dd = vec![0.0; q.out.len()];
    for (j, (trace, item)) in traces.iter().zip(&candidates).enumerate() {
        let p = (logits[j] - lse).exp();
        let w = (p - if j == 0 { 1.0 } else { 0.0 }) / tau;
        crate::numerics::axpy(w, &trace.out, &mut dq);
        dd.iter_mut().zip(&q.out).for_each(|(d, v)| *d = w * v);
        model.backward(Side::Doc, *item, trace, &dd, &mut grads);
    }
    model.backward(Side::Query, query, &q, &dq, &mut grads);
    Ok((loss, grads))
}

/// Loss value only; used by finite-difference checks and monitoring.
pub fn local_softmax_loss_value(
    model: &DrModel,
    query: Item<'_>,
    positive: Item<'_>,
    negatives: &[Item<'_>],
) -> Result<f64> {
    if negatives.is_empty() {
        return Err(LabError::domain(
            "local softmax needs at least one negative",
        ));
    }
    let tau = model.temperature();
    let q = model.embed(Side::Query, query)?;
    let mut logits = Vec::with_capacity(negatives.len() + 1);
    for c in std::iter::once(positive).chain(negatives.iter().copied()) {
        logits.push(dot(&q, &model.embed(Side::Doc, c)?) / tau);
    }
    Ok(logsumexp_unchecked(&logits) - logits[0])
}

/// SGD settings for [`train_dr`].
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DrTrainConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Candidate-set size `K` (positive plus `K − 1` negatives).
    pub num_candidates: usize,
    pub policy: NegativePolicy,
    /// Loss history gets one entry (the window mean) every `log_every` steps.
    pub log_every: usize,
    pub hard_refresh_every: usize,
}

impl Default for DrTrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            learning_rate: 0.1,
            batch_size: 16,
            num_candidates: 16,
            policy: NegativePolicy::uniform(),
            log_every: 100,
            hard_refresh_every: 100,
        }
    }
}

/// Initializes a model from `model_config` and trains it; see [`train_dr_from`].
pub fn train_dr(
    data: &TrainingData,
    model_config: &DrConfig,
    train: &DrTrainConfig,
    stream: &RandomStream,
) -> Result<(DrModel, Vec<f64>)> {
    let model = DrModel::new(model_config, &data.queries, &data.docs, &stream.derive(0))?;
    train_dr_from(model, data, train, stream)
}

/// Plain SGD on the local softmax loss. Deterministic given `stream`.
pub fn train_dr_from(
    mut model: DrModel,
    data: &TrainingData,
    train: &DrTrainConfig,
    stream: &RandomStream,
) -> Result<(DrModel, Vec<f64>)> {
    if train.num_candidates < 2 {
        return Err(LabError::domain("K must be at least 2"));
    }
    if train.batch_size == 0 || train.log_every == 0 || train.hard_refresh_every == 0 {
        return Err(LabError::domain(
            "batch_size, log_every and hard_refresh_every must be positive",
        ));
    }
    if !(train.learning_rate >= 0.0) {
        return Err(LabError::domain("learning rate must be non-negative"));
    }
    train.policy.validate()?;
    let num_docs = data.num_docs();
    let mut rng = stream.derive(1).rng();
    let mut pools: Vec<Option<Vec<usize>>> = vec![None; data.num_queries()];
    let mut doc_embeddings: Option<Matrix> = None;
    let mut history = Vec::new();
    let mut window = 0.0;

    for step in 0..train.steps {
        if train.policy.needs_hard_pool() && step % train.hard_refresh_every == 0 {
            pools.iter_mut().for_each(|p| *p = None);
            doc_embeddings = Some(model.embed_all(Side::Doc, &data.docs)?);
        }
        let mut step_grads = Gradients::new();
        let mut step_loss = 0.0;
        for _ in 0..train.batch_size {
            let pair = data.pairs[rng.random_range(0..data.pairs.len())];
            let pool: &[usize] = if train.policy.needs_hard_pool() {
                if pools[pair.query].is_none() {
                    let d = doc_embeddings.as_ref().expect("refreshed above");
                    let q = model.embed(Side::Query, data.queries.item(pair.query))?;
                    pools[pair.query] = Some(top_by_score(&q, d, train.policy.hard_pool_size + 1));
                }
                pools[pair.query].as_deref().unwrap_or(&[])
            } else {
                &[]
            };
            let draw = sample_negatives(
                &train.policy,
                pair.positive,
                train.num_candidates - 1,
                num_docs,
                pool,
                &mut rng,
            )?;
            let negs: Vec<Item<'_>> = draw.docs.iter().map(|&d| data.docs.item(d)).collect();
            let (loss, grads) = local_softmax_loss(
                &model,
                data.queries.item(pair.query),
                data.docs.item(pair.positive),
                &negs,
            )?;
            step_loss += loss;
            step_grads.extend(grads);
        }
        let step_loss = step_loss / train.batch_size as f64;
        if !step_loss.is_finite() {
            return Err(LabError::Diverged {
                step,
                loss: step_loss,
            });
        }
        step_grads.scale(1.0 / train.batch_size as f64);
        model.apply_sgd(&step_grads, train.learning_rate);
        window += step_loss;
        if (step + 1) % train.log_every == 0 {
            history.push(window / train.log_every as f64);
            window = 0.0;
        }
    }
    if !model.parameters_finite() {
        return Err(LabError::Diverged {
            step: train.steps,
            loss: f64::NAN,
        });
    }
    Ok((model, history))
}

/// Indices of the `count` highest-scoring rows of `docs` against `query`, ties to lower index.
fn top_by_score(query: &[f64], docs: &Matrix, count: usize) -> Vec<usize> {
    let scores: Vec<f64> = (0..docs.rows()).map(|d| dot(query, docs.row(d))).collect();
    rank_by_score(&scores).into_iter().take(count).collect()
}

/// Indices sorted by score descending, ties broken by ascending index.
pub fn rank_by_score(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

/// One retrieved document.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Retrieved {
    pub doc: usize,
    pub score: f64,
    /// Full-softmax probability over every document at the model temperature.
    pub probability: f64,
}

/// Exact top-`k` from a row of raw scores.
pub fn topk_from_scores(scores: &[f64], temperature: f64, k: usize) -> Result<Vec<Retrieved>> {
    if k == 0 || k > scores.len() {
        return Err(LabError::domain(format!(
            "k = {k} outside 1..={}",
            scores.len()
        )));
    }
    let scaled: Vec<f64> = scores.iter().map(|s| s / temperature).collect();
    let lse = logsumexp_unchecked(&scaled);
    Ok(rank_by_score(scores)
        .into_iter()
        .take(k)
        .map(|doc| Retrieved {
            doc,
            score: scores[doc],
            probability: (scaled[doc] - lse).exp(),
        })
        .collect())
}

/// Exact top-`k` documents for one query, with calibrated full-softmax probabilities.
pub fn retrieve_topk_dr(
    model: &DrModel,
    query: Item<'_>,
    docs: &Inputs,
    k: usize,
) -> Result<Vec<Retrieved>> {
    let q = model.embed(Side::Query, query)?;
    let d = model.embed_all(Side::Doc, docs)?;
    let scores: Vec<f64> = (0..d.rows()).map(|i| dot(&q, d.row(i))).collect();
    topk_from_scores(&scores, model.temperature(), k)
}

/// Full-softmax distribution `P̃(·|q)` of every query row in `scores`.
pub fn full_softmax(scores: &Matrix, temperature: f64) -> Matrix {
    let mut out = scores.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        row.iter_mut().for_each(|v| *v /= temperature);
        let lse = logsumexp_unchecked(row);
        row.iter_mut().for_each(|v| *v = (*v - lse).exp());
    }
    out
}
