//! Batch losses with gradients.
//!
//! Each positive owns `k` contiguous negatives. The per-negative weights are
//! uniform (`1/k`) for the basic sampler or, for the self-adversarial
//! sampler, a softmax over `temperature * s_neg` treated as constants.

use crate::error::{Error, Result};
use crate::model::{EmbeddingModel, Gradients, Scalar, Table, Workspace};
use crate::triples::Triple;

use super::{LossKind, SamplerKind, TrainConfig};

/// Parameters of the loss that do not depend on the model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSpec {
    pub kind: LossKind,
    pub sampler: SamplerKind,
    pub margin: f64,
    pub temperature: f64,
    pub l2: f64,
}

impl From<&TrainConfig> for LossSpec {
    fn from(c: &TrainConfig) -> Self {
        Self {
            kind: c.loss,
            sampler: c.sampler,
            margin: c.margin,
            temperature: c.adversarial_temperature,
            l2: c.l2_coefficient,
        }
    }
}

/// `log(sigmoid(x))`, stable for large `|x|`.
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Per-negative weights for one positive.
pub fn negative_weights(sampler: SamplerKind, temperature: f64, neg_scores: &[f64], out: &mut [f64]) {
    let k = neg_scores.len();
    match sampler {
        SamplerKind::BasicUniform => out.iter_mut().for_each(|w| *w = 1.0 / k as f64),
        SamplerKind::SelfAdversarial => {
            let max = neg_scores
                .iter()
                .map(|s| temperature * s)
                .fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (w, s) in out.iter_mut().zip(neg_scores) {
                *w = (temperature * s - max).exp();
                sum += *w;
            }
            out.iter_mut().for_each(|w| *w /= sum);
        }
    }
}

/// Loss of one positive and its negatives, plus `d loss / d score` for each.
pub fn pair_loss(spec: &LossSpec, pos: f64, negs: &[f64], weights: &mut [f64], d_pos: &mut f64, d_negs: &mut [f64]) -> f64 {
    negative_weights(spec.sampler, spec.temperature, negs, weights);
    match spec.kind {
        LossKind::MarginRanking => {
            let mut loss = 0.0;
            *d_pos = 0.0;
            for j in 0..negs.len() {
                let slack = spec.margin - pos + negs[j];
                if slack > 0.0 {
                    loss += weights[j] * slack;
                    *d_pos -= weights[j];
                    d_negs[j] = weights[j];
                } else {
                    d_negs[j] = 0.0;
                }
            }
            loss
        }
        LossKind::SelfAdversarialLogistic => {
            let gamma = spec.margin;
            let mut loss = -log_sigmoid(gamma + pos);
            *d_pos = -sigmoid(-gamma - pos);
            for j in 0..negs.len() {
                loss -= weights[j] * log_sigmoid(-gamma - negs[j]);
                d_negs[j] = weights[j] * sigmoid(gamma + negs[j]);
            }
            loss
        }
    }
}

/// Stash of per-triple local gradients, so each triple's backward pass runs
/// once even though its upstream weight depends on the other scores.
struct Local {
    head: u32,
    rel: u32,
    tail: u32,
    gh: Vec<f64>,
    gr: Vec<f64>,
    gt: Vec<f64>,
    gm: Vec<f64>,
}

/// Accumulates the summed (not yet averaged) data loss of a shard and its
/// gradient into `grads`. `negatives.len() == positives.len() * k`.
pub(crate) fn data_term<F: Scalar>(
    model: &EmbeddingModel<F>,
    positives: &[Triple],
    negatives: &[Triple],
    spec: &LossSpec,
    grads: &mut Gradients,
) -> f64 {
    let k = if positives.is_empty() { 0 } else { negatives.len() / positives.len() };
    let mut ws: Workspace = model.workspace();
    let mut locals: Vec<Local> = (0..=k)
        .map(|_| Local {
            head: 0,
            rel: 0,
            tail: 0,
            gh: ws.gh.clone(),
            gr: ws.gr.clone(),
            gt: ws.gt.clone(),
            gm: ws.gm.clone(),
        })
        .collect();
    let mut scores = vec![0.0; k + 1];
    let mut weights = vec![0.0; k];
    let mut d_negs = vec![0.0; k];
    let mut total = 0.0;

    for (i, pos) in positives.iter().enumerate() {
        let group = std::iter::once(pos).chain(&negatives[i * k..(i + 1) * k]);
        for (j, t) in group.enumerate() {
            scores[j] = model.local_backward(&mut ws, t);
            let local = &mut locals[j];
            local.head = t.head;
            local.rel = t.relation;
            local.tail = t.tail;
            local.gh.copy_from_slice(&ws.gh);
            local.gr.copy_from_slice(&ws.gr);
            local.gt.copy_from_slice(&ws.gt);
            local.gm.copy_from_slice(&ws.gm);
        }
        let mut d_pos = 0.0;
        total += pair_loss(spec, scores[0], &scores[1..], &mut weights, &mut d_pos, &mut d_negs);
        for (j, local) in locals.iter().enumerate() {
            let w = if j == 0 { d_pos } else { d_negs[j - 1] };
            let add = |dst: &mut [f64], src: &[f64]| {
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += w * s;
                }
            };
            add(grads.entity.row_mut(local.head as usize), &local.gh);
            add(grads.entity.row_mut(local.tail as usize), &local.gt);
            add(grads.relation.row_mut(local.rel as usize), &local.gr);
            if let Some(p) = grads.projection.as_mut() {
                add(p.row_mut(local.rel as usize), &local.gm);
            }
        }
    }
    total
}

/// Adds `l2 * mean_{touched rows} ||row||^2` and its gradient for every row
/// already present in `grads`; returns the regularization value.
pub(crate) fn l2_term<F: Scalar>(model: &EmbeddingModel<F>, l2: f64, grads: &mut Gradients) -> f64 {
    let touched = grads.touched();
    if l2 == 0.0 || touched == 0 {
        return 0.0;
    }
    let scale = l2 / touched as f64;
    let mut sum = 0.0;
    for table in [Table::Entity, Table::Relation, Table::Projection] {
        let Some(g) = grads.table_mut(table) else { continue };
        for (row, vals) in g.iter_mut() {
            for (gv, p) in vals.iter_mut().zip(model.row(table, row)) {
                let p = p.to_f64();
                sum += p * p;
                *gv += 2.0 * scale * p;
            }
        }
    }
    scale * sum
}

/// Mean loss over the positives (data term) plus the L2 term, and the
/// gradient of that total.
pub fn loss<F: Scalar>(
    model: &EmbeddingModel<F>,
    positives: &[Triple],
    negatives: &[Triple],
    spec: &LossSpec,
) -> Result<(f64, Gradients)> {
    if positives.is_empty() || negatives.is_empty() || !negatives.len().is_multiple_of(positives.len()) {
        return Err(Error::Shape(format!(
            "{} negatives cannot be grouped evenly over {} positives",
            negatives.len(),
            positives.len()
        )));
    }
    positives
        .iter()
        .chain(negatives)
        .try_for_each(|t| model.check_triple(t))?;
    let mut grads = Gradients::for_model(model);
    let data = data_term(model, positives, negatives, spec, &mut grads);
    let n = positives.len() as f64;
    grads.scale(1.0 / n);
    let reg = l2_term(model, spec.l2, &mut grads);
    Ok((data / n + reg, grads))
}
