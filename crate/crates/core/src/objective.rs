//! Mutual-information objectives with Head-Tail negatives.
//!
//! For a batch of `n` graphs the positive pairs are `(h(Gⁱ), h̃(Gⁱ))`, the head
//! negatives `(h(Ĝⁱ), h̃(Gⁱ))` pair each reconstruction with the embedding of
//! the same graph after its `X⁽⁰⁾` rows were shuffled, and the tail negatives
//! `(h(Gʲ), h̃(Gⁱ))` cover every ordered pair `i ≠ j`. The discriminator is a
//! plain dot product. All objectives here are to be maximized.

use std::str::FromStr;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::graph::{GraphBatch, Label};
use crate::model::{Model, Task};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    #[default]
    Jsd,
    Dv,
}

impl FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "jsd" => Ok(Estimator::Jsd),
            "dv" => Ok(Estimator::Dv),
            other => Err(Error::config(format!("unknown estimator `{other}`"))),
        }
    }
}

/// Objective value and its parts, all under the maximization sign.
///
/// `total = positive + head_negative + tail_negative` for the unsupervised
/// objective, and `total = supervised + λ·(that sum)` in the semi-supervised
/// case.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossReport {
    pub total: f64,
    pub positive: f64,
    pub head_negative: f64,
    pub tail_negative: f64,
    pub supervised: Option<f64>,
}

/// Dot-product discriminator on plain vectors.
pub fn score(h: &[f64], h_tilde: &[f64]) -> Result<f64> {
    if h.len() != h_tilde.len() {
        return Err(Error::Shape {
            op: "score",
            lhs: vec![h.len()],
            rhs: vec![h_tilde.len()],
        });
    }
    Ok(h.iter().zip(h_tilde).map(|(a, b)| a * b).sum())
}

/// Row-wise dot products of two `[n, d]` matrices, as `[n, 1]`.
pub fn paired_scores(tape: &mut Tape, h: Var, h_tilde: Var) -> Result<Var> {
    if tape.value(h).shape() != tape.value(h_tilde).shape() {
        return Err(Error::Shape {
            op: "paired_scores",
            lhs: tape.value(h).shape().to_vec(),
            rhs: tape.value(h_tilde).shape().to_vec(),
        });
    }
    let prod = tape.mul(h, h_tilde)?;
    tape.row_sums(prod)
}

/// Scores of all `(h(Gʲ), h̃(Gⁱ))` with `i ≠ j`, as `[n(n-1), 1]`.
pub fn cross_scores(tape: &mut Tape, h: Var, h_tilde: Var) -> Result<Var> {
    let n = tape.value(h).rows();
    if n < 2 {
        return Err(Error::contract(
            "tail negatives need a batch of at least 2 graphs; increase batch_size",
        ));
    }
    let ht = tape.transpose(h_tilde)?;
    let all = tape.matmul(h, ht)?;
    let flat = tape.reshape(all, vec![n * n, 1])?;
    let off_diagonal: Arc<[usize]> = (0..n * n).filter(|k| k / n != k % n).collect();
    tape.gather_rows(flat, off_diagonal)
}

/// Permutation of batch rows that shuffles nodes within each graph only.
pub fn node_permutation<R: Rng + ?Sized>(batch: &GraphBatch, rng: &mut R) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..batch.num_nodes).collect();
    for g in 0..batch.num_graphs {
        perm[batch.node_offsets[g]..batch.node_offsets[g + 1]].shuffle(rng);
    }
    perm
}

/// `X̂⁽⁰⁾`: rows of `x0` shuffled within each graph's node block.
pub fn permute_nodes<R: Rng + ?Sized>(
    tape: &mut Tape,
    x0: Var,
    batch: &GraphBatch,
    rng: &mut R,
) -> Result<Var> {
    let perm = node_permutation(batch, rng);
    tape.gather_rows(x0, perm.into())
}

/// Differentiable parts of an estimator value.
#[derive(Clone, Copy, Debug)]
pub struct EstimatorTerms {
    pub total: Var,
    pub positive: Var,
    pub head_negative: Option<Var>,
    pub tail_negative: Var,
}

fn check_nonempty(tape: &Tape, v: Var, what: &str) -> Result<()> {
    if tape.value(v).is_empty() {
        return Err(Error::contract(format!(
            "{what} set is empty; batches need at least 2 graphs"
        )));
    }
    Ok(())
}

/// `E_pos[-sp(-T)] - E_tail[sp(T)] - E_head[sp(T)]`.
pub fn jsd_loss(tape: &mut Tape, positive: Var, head: Var, tail: Var) -> Result<EstimatorTerms> {
    check_nonempty(tape, positive, "positive")?;
    check_nonempty(tape, head, "head negative")?;
    check_nonempty(tape, tail, "tail negative")?;
    let neg_pos = tape.neg(positive);
    let sp = tape.softplus(neg_pos);
    let mean = tape.mean(sp)?;
    let pos_term = tape.neg(mean);
    let sp_head = tape.softplus(head);
    let mean_head = tape.mean(sp_head)?;
    let head_term = tape.neg(mean_head);
    let sp_tail = tape.softplus(tail);
    let mean_tail = tape.mean(sp_tail)?;
    let tail_term = tape.neg(mean_tail);
    let partial = tape.add(pos_term, head_term)?;
    let total = tape.add(partial, tail_term)?;
    Ok(EstimatorTerms {
        total,
        positive: pos_term,
        head_negative: Some(head_term),
        tail_negative: tail_term,
    })
}

/// `E_pos[T] - log E_neg[e^T]`, the negative expectation pooling head and tail.
pub fn dv_loss(tape: &mut Tape, positive: Var, head: Var, tail: Var) -> Result<EstimatorTerms> {
    check_nonempty(tape, positive, "positive")?;
    check_nonempty(tape, tail, "tail negative")?;
    let pooled = tape.stack_rows(&[head, tail])?;
    let count = tape.value(pooled).len() as f64;
    let pos_term = tape.mean(positive)?;
    let lse = tape.log_sum_exp(pooled)?;
    let log_mean = tape.constant(Tensor::scalar(-count.ln()));
    let log_mean = tape.add(lse, log_mean)?;
    let neg_term = tape.neg(log_mean);
    let total = tape.add(pos_term, neg_term)?;
    Ok(EstimatorTerms {
        total,
        positive: pos_term,
        head_negative: None,
        tail_negative: neg_term,
    })
}

pub fn estimate(
    tape: &mut Tape,
    estimator: Estimator,
    positive: Var,
    head: Var,
    tail: Var,
) -> Result<EstimatorTerms> {
    match estimator {
        Estimator::Jsd => jsd_loss(tape, positive, head, tail),
        Estimator::Dv => dv_loss(tape, positive, head, tail),
    }
}

fn report(tape: &Tape, terms: &EstimatorTerms) -> LossReport {
    LossReport {
        total: tape.value(terms.total).item(),
        positive: tape.value(terms.positive).item(),
        head_negative: terms.head_negative.map_or(0.0, |v| tape.value(v).item()),
        tail_negative: tape.value(terms.tail_negative).item(),
        supervised: None,
    }
}

/// The unsupervised objective on one batch, recorded on `tape`.
///
/// `rng` drives the head-negative node shuffle.
pub fn unsupervised_loss<R: Rng + ?Sized>(
    tape: &mut Tape,
    model: &Model,
    batch: &GraphBatch,
    estimator: Estimator,
    rng: &mut R,
) -> Result<(Var, LossReport)> {
    if batch.num_graphs < 2 {
        return Err(Error::contract(
            "the unsupervised objective needs a batch of at least 2 graphs; increase batch_size",
        ));
    }
    let store = &model.store;
    let x0 = model.encoder.initial_embeddings(tape, store, batch)?;
    let (nodes, h) = model.encoder.propagate(tape, store, x0, batch)?;
    let h_tilde = model.generator.reconstruct(tape, store, nodes, batch)?;
    let shuffled = permute_nodes(tape, x0, batch, rng)?;
    let (_, h_hat) = model.encoder.propagate(tape, store, shuffled, batch)?;
    let positive = paired_scores(tape, h, h_tilde)?;
    let head = paired_scores(tape, h_hat, h_tilde)?;
    let tail = cross_scores(tape, h, h_tilde)?;
    let terms = estimate(tape, estimator, positive, head, tail)?;
    Ok((terms.total, report(tape, &terms)))
}

/// Supervised fit term (negative cross-entropy or negative MSE), to maximize.
pub fn supervised_term(tape: &mut Tape, model: &Model, batch: &GraphBatch) -> Result<Var> {
    let (head, task) = match (&model.head, model.config.task) {
        (Some(head), Some(task)) => (head, task),
        _ => return Err(Error::contract("supervised objective needs a prediction head")),
    };
    let out = model.encoder.encode(tape, &model.store, batch)?;
    let pred = head.forward(tape, &model.store, out.graphs)?;
    let n = batch.num_graphs;
    match task {
        Task::Classification { classes } => {
            let mut picks = Vec::with_capacity(n);
            for (i, label) in batch.labels.iter().enumerate() {
                match label {
                    Some(Label::Class(c)) if *c < classes => picks.push(i * classes + c),
                    other => {
                        return Err(Error::DataMismatch(format!(
                            "graph {i} of the labeled batch has label {other:?}, expected a class below {classes}"
                        )))
                    }
                }
            }
            let logp = tape.log_softmax_rows(pred)?;
            let flat = tape.reshape(logp, vec![n * classes, 1])?;
            let picked = tape.gather_rows(flat, picks.into())?;
            tape.mean(picked)
        }
        Task::Regression { targets } => {
            let mut data = Vec::with_capacity(n * targets);
            for (i, label) in batch.labels.iter().enumerate() {
                match label {
                    Some(Label::Target(t)) if t.len() == targets => data.extend_from_slice(t),
                    other => {
                        return Err(Error::DataMismatch(format!(
                            "graph {i} of the labeled batch has label {other:?}, expected {targets} targets"
                        )))
                    }
                }
            }
            let y = tape.constant(Tensor::matrix(n, targets, data)?);
            let diff = tape.sub(pred, y)?;
            let sq = tape.mul(diff, diff)?;
            let mse = tape.mean(sq)?;
            Ok(tape.neg(mse))
        }
    }
}

/// `supervised + λ·unsupervised`; the unsupervised part is skipped when `λ = 0`.
pub fn semi_supervised_loss<R: Rng + ?Sized>(
    tape: &mut Tape,
    model: &Model,
    labeled: &GraphBatch,
    unlabeled: Option<&GraphBatch>,
    lambda: f64,
    estimator: Estimator,
    rng: &mut R,
) -> Result<(Var, LossReport)> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::config(format!("lambda must be finite and >= 0, got {lambda}")));
    }
    let sup = supervised_term(tape, model, labeled)?;
    let sup_value = tape.value(sup).item();
    let unlabeled = match unlabeled {
        Some(batch) if lambda > 0.0 => batch,
        _ => {
            let report = LossReport {
                total: sup_value,
                supervised: Some(sup_value),
                ..LossReport::default()
            };
            return Ok((sup, report));
        }
    };
    let (uns, mut report) = unsupervised_loss(tape, model, unlabeled, estimator, rng)?;
    let weighted = tape.scale(uns, lambda);
    let total = tape.add(sup, weighted)?;
    report.total = tape.value(total).item();
    report.supervised = Some(sup_value);
    Ok((total, report))
}
