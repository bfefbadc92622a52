//! Training loops, run records and the metrics log.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamState, ParameterStore, Tape, Tensor};
use crate::error::{Error, Result};
use crate::eval::{evaluate_linear, mean_absolute_error, EvalConfig};
use crate::graph::{make_batch, Graph, Label};
use crate::model::{Model, Task};
use crate::objective::{semi_supervised_loss, unsupervised_loss, Estimator, LossReport};
use crate::seed::{seeded, streams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Evaluate every this many epochs; 0 evaluates only after the last one.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 128,
            lr: 1e-3,
            seed: 0,
            eval_every: 5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("train.epochs must be >= 1"));
        }
        if self.batch_size < 2 {
            return Err(Error::config(
                "train.batch_size must be >= 2 so every batch has tail negatives",
            ));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("train.lr must be a positive number"));
        }
        Ok(())
    }
}

/// One periodic evaluation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalRecord {
    pub epoch: usize,
    pub mean: f64,
    pub std: f64,
}

/// Everything a run produced besides parameters. Append-only.
#[derive(Clone, Debug, Default)]
pub struct RunRecord {
    pub steps: Vec<LossReport>,
    /// Mean report of each epoch.
    pub epochs: Vec<LossReport>,
    pub evals: Vec<EvalRecord>,
    /// Epoch whose parameters were kept as the best, if any evaluation ran.
    pub best_epoch: Option<usize>,
    /// Test metric of the selected parameters (semi-supervised runs).
    pub test_metric: Option<f64>,
    pub wall_clock: Duration,
    pub config_snapshot: String,
}

impl RunRecord {
    /// `step,total,pos,head_neg,tail_neg[,sup]`, one line per optimizer step.
    pub fn metrics_csv(&self) -> String {
        let semi = self.steps.iter().any(|r| r.supervised.is_some());
        let mut out = String::from("step,total,pos,head_neg,tail_neg");
        out.push_str(if semi { ",sup\n" } else { "\n" });
        for (i, r) in self.steps.iter().enumerate() {
            let _ = write!(
                out,
                "{},{},{},{},{}",
                i + 1,
                r.total,
                r.positive,
                r.head_negative,
                r.tail_negative
            );
            if semi {
                let _ = write!(out, ",{}", r.supervised.unwrap_or(0.0));
            }
            out.push('\n');
        }
        out
    }

    fn close_epoch(&mut self, from: usize) {
        let slice = &self.steps[from..];
        let n = slice.len().max(1) as f64;
        let avg = |f: fn(&LossReport) -> f64| slice.iter().map(f).sum::<f64>() / n;
        let supervised = slice
            .iter()
            .map(|r| r.supervised)
            .collect::<Option<Vec<f64>>>()
            .map(|v| v.iter().sum::<f64>() / n);
        self.epochs.push(LossReport {
            total: avg(|r| r.total),
            positive: avg(|r| r.positive),
            head_negative: avg(|r| r.head_negative),
            tail_negative: avg(|r| r.tail_negative),
            supervised,
        });
    }
}

/// Result of a training run.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters after the last step.
    pub model: Model,
    /// Parameters at the best evaluation; equal to `model` without evaluations.
    pub best: Model,
    pub record: RunRecord,
}

/// Shuffled index batches for one epoch.
///
/// A trailing batch with fewer than 2 graphs is dropped.
pub fn epoch_batches<R: Rng + ?Sized>(n: usize, batch_size: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order
        .chunks(batch_size.max(1))
        .filter(|c| c.len() >= 2)
        .map(<[usize]>::to_vec)
        .collect()
}

fn gather<'a>(graphs: &'a [Graph], idx: &[usize]) -> Vec<&'a Graph> {
    idx.iter().map(|&i| &graphs[i]).collect()
}

fn check_finite(report: &LossReport, step: usize) -> Result<()> {
    let parts = [
        ("total", report.total),
        ("pos", report.positive),
        ("head_neg", report.head_negative),
        ("tail_neg", report.tail_negative),
        ("sup", report.supervised.unwrap_or(0.0)),
    ];
    match parts.iter().find(|(_, v)| !v.is_finite()) {
        Some((name, v)) => Err(Error::NonFinite {
            step,
            detail: format!("{name} = {v}"),
        }),
        None => Ok(()),
    }
}

fn should_eval(cfg: &TrainConfig, epoch: usize) -> bool {
    epoch == cfg.epochs || (cfg.eval_every > 0 && epoch % cfg.eval_every == 0)
}

fn snapshot_store(store: &ParameterStore) -> ParameterStore {
    store.clone()
}

/// Maximizes the unsupervised objective on `graphs` with Adam.
///
/// `graphs` must already be prepared for `model`. With `labels`, the
/// embeddings are scored by [`evaluate_linear`] on the schedule of
/// `eval_every` and the best-scoring parameters are kept.
pub fn train_unsupervised(
    mut model: Model,
    graphs: &[Graph],
    labels: Option<&[usize]>,
    cfg: &TrainConfig,
    estimator: Estimator,
    eval: &EvalConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if graphs.len() < 2 {
        return Err(Error::contract("training needs at least 2 graphs"));
    }
    let started = Instant::now();
    let mut shuffle = seeded(cfg.seed, streams::SHUFFLE);
    let mut corruption = seeded(cfg.seed, streams::CORRUPTION);
    let mut adam = AdamState::new(&model.store, cfg.lr);
    let mut record = RunRecord::default();
    let mut best: Option<(f64, ParameterStore)> = None;
    for epoch in 1..=cfg.epochs {
        let first = record.steps.len();
        for idx in epoch_batches(graphs.len(), cfg.batch_size, &mut shuffle) {
            let batch = make_batch(gather(graphs, &idx))?;
            let mut tape = Tape::new();
            let (objective, report) =
                unsupervised_loss(&mut tape, &model, &batch, estimator, &mut corruption)?;
            check_finite(&report, record.steps.len() + 1)?;
            let loss = tape.neg(objective);
            tape.backward(loss, &mut model.store)?;
            adam.step(&mut model.store);
            record.steps.push(report);
        }
        record.close_epoch(first);
        if let Some(labels) = labels {
            if should_eval(cfg, epoch) {
                let acc = evaluate_linear(&model.embed(graphs)?, labels, eval)?;
                log::info!("epoch {epoch}: accuracy {:.4} ± {:.4}", acc.mean, acc.std);
                record.evals.push(EvalRecord {
                    epoch,
                    mean: acc.mean,
                    std: acc.std,
                });
                if best.as_ref().map_or(true, |(b, _)| acc.mean > *b) {
                    best = Some((acc.mean, snapshot_store(&model.store)));
                    record.best_epoch = Some(epoch);
                }
            }
        }
    }
    record.wall_clock = started.elapsed();
    let best = match best {
        Some((_, store)) => Model { store, ..model.clone() },
        None => model.clone(),
    };
    Ok(TrainOutcome {
        model,
        best,
        record,
    })
}

/// Labeled, unlabeled, validation and test graphs, all prepared.
#[derive(Clone, Copy, Debug)]
pub struct SemiSplits<'a> {
    pub labeled: &'a [Graph],
    pub unlabeled: &'a [Graph],
    pub validation: &'a [Graph],
    pub test: &'a [Graph],
}

/// Validation or test metric of the head; larger is better.
///
/// Accuracy for classification, negated MAE for regression.
fn head_score(model: &Model, graphs: &[Graph]) -> Result<f64> {
    if graphs.is_empty() {
        return Err(Error::contract("cannot score an empty split"));
    }
    let pred = model.predict(graphs)?;
    match model.config.task {
        Some(Task::Classification { .. }) => {
            let mut hits = 0;
            for (i, g) in graphs.iter().enumerate() {
                let row = pred.row(i);
                let arg = (0..row.len()).fold(0, |b, j| if row[j] > row[b] { j } else { b });
                if g.label.as_ref().and_then(Label::class) == Some(arg) {
                    hits += 1;
                }
            }
            Ok(hits as f64 / graphs.len() as f64)
        }
        Some(Task::Regression { .. }) => {
            let target = targets(graphs, pred.cols())?;
            Ok(-mean_absolute_error(&pred, &target)?)
        }
        None => Err(Error::contract("model has no prediction head")),
    }
}

/// Regression targets stacked as `[graphs.len(), width]`.
pub fn targets(graphs: &[Graph], width: usize) -> Result<Tensor> {
    let mut data = Vec::with_capacity(graphs.len() * width);
    for (i, g) in graphs.iter().enumerate() {
        match &g.label {
            Some(Label::Target(t)) if t.len() == width => data.extend_from_slice(t),
            other => {
                return Err(Error::DataMismatch(format!(
                    "graph {i} has label {other:?}, expected {width} regression targets"
                )))
            }
        }
    }
    Tensor::matrix(graphs.len(), width, data)
}

/// Maximizes `supervised + λ·unsupervised`.
///
/// Labeled batches follow the epoch shuffle; each step also draws an
/// unsupervised batch from labeled ∪ unlabeled on a separate stream. With
/// `λ = 0` the unsupervised branch is never evaluated, so the run matches
/// [`train_supervised`] exactly. Parameters are selected on the validation
/// split and the test metric (accuracy, or MAE for regression) is recorded.
pub fn train_semisupervised(
    mut model: Model,
    splits: SemiSplits<'_>,
    cfg: &TrainConfig,
    estimator: Estimator,
    lambda: f64,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::config(format!("lambda must be finite and >= 0, got {lambda}")));
    }
    if splits.labeled.len() < 2 {
        return Err(Error::contract("semi-supervised training needs at least 2 labeled graphs"));
    }
    let started = Instant::now();
    let pool: Vec<&Graph> = splits.labeled.iter().chain(splits.unlabeled).collect();
    let mut shuffle = seeded(cfg.seed, streams::SHUFFLE);
    let mut unlabeled_order = seeded(cfg.seed, streams::UNLABELED);
    let mut corruption = seeded(cfg.seed, streams::CORRUPTION);
    let mut pool_batches: Vec<Vec<usize>> = Vec::new();
    let mut adam = AdamState::new(&model.store, cfg.lr);
    let mut record = RunRecord::default();
    let mut best: Option<(f64, ParameterStore)> = None;
    for epoch in 1..=cfg.epochs {
        let first = record.steps.len();
        for idx in epoch_batches(splits.labeled.len(), cfg.batch_size, &mut shuffle) {
            let labeled = make_batch(gather(splits.labeled, &idx))?;
            let unlabeled = if lambda > 0.0 {
                if pool_batches.is_empty() {
                    pool_batches = epoch_batches(pool.len(), cfg.batch_size, &mut unlabeled_order);
                    pool_batches.reverse();
                }
                let idx = pool_batches.pop().expect("refilled above");
                Some(make_batch(idx.iter().map(|&i| pool[i]))?)
            } else {
                None
            };
            let mut tape = Tape::new();
            let (objective, report) = semi_supervised_loss(
                &mut tape,
                &model,
                &labeled,
                unlabeled.as_ref(),
                lambda,
                estimator,
                &mut corruption,
            )?;
            check_finite(&report, record.steps.len() + 1)?;
            let loss = tape.neg(objective);
            tape.backward(loss, &mut model.store)?;
            adam.step(&mut model.store);
            record.steps.push(report);
        }
        record.close_epoch(first);
        if should_eval(cfg, epoch) && !splits.validation.is_empty() {
            let score = head_score(&model, splits.validation)?;
            record.evals.push(EvalRecord {
                epoch,
                mean: score,
                std: 0.0,
            });
            if best.as_ref().map_or(true, |(b, _)| score > *b) {
                best = Some((score, snapshot_store(&model.store)));
                record.best_epoch = Some(epoch);
            }
        }
    }
    let best = match best {
        Some((_, store)) => Model { store, ..model.clone() },
        None => model.clone(),
    };
    if !splits.test.is_empty() {
        let score = head_score(&best, splits.test)?;
        record.test_metric = Some(match best.config.task {
            Some(Task::Regression { .. }) => -score,
            _ => score,
        });
    }
    record.wall_clock = started.elapsed();
    Ok(TrainOutcome {
        model,
        best,
        record,
    })
}

/// Index sets of a random labeled / unlabeled / validation / test split.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitIndices {
    pub labeled: Vec<usize>,
    pub unlabeled: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

/// Disjoint random split of `0..n`; fractions are rounded down.
pub fn split_indices(n: usize, labeled: f64, validation: f64, test: f64, seed: u64) -> SplitIndices {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeded(seed, streams::SPLIT));
    let count = |f: f64| ((n as f64) * f).floor() as usize;
    let (nl, nv, nt) = (count(labeled), count(validation), count(test));
    let mut rest = order.into_iter();
    let mut take = |k: usize| rest.by_ref().take(k).collect::<Vec<_>>();
    let labeled = take(nl);
    let validation = take(nv);
    let test = take(nt);
    let unlabeled = take(n);
    SplitIndices {
        labeled,
        unlabeled,
        validation,
        test,
    }
}

/// Purely supervised training on the labeled split.
pub fn train_supervised(model: Model, splits: SemiSplits<'_>, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let splits = SemiSplits {
        unlabeled: &[],
        ..splits
    };
    train_semisupervised(model, splits, cfg, Estimator::Jsd, 0.0)
}
