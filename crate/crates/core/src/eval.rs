//! Linear evaluation of frozen embeddings.
//!
//! Repeated stratified k-fold cross-validation of an L2-regularized
//! multinomial logistic regression. The inverse regularization strength `C` is
//! picked per fold on a stratified holdout of the training part. Repetitions
//! re-draw the fold assignment; the best and worst repetition are dropped
//! before averaging.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::seed::{seeded, streams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub folds: usize,
    /// Candidate inverse regularization strengths.
    pub c_grid: Vec<f64>,
    pub repetitions: usize,
    /// Gradient iterations per logistic-regression fit.
    pub iterations: usize,
    /// Fold-assignment seed; runs set it from the master seed.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            folds: 10,
            c_grid: vec![1e-3, 1e-2, 1e-1, 1.0, 1e1, 1e2, 1e3],
            repetitions: 7,
            iterations: 300,
            seed: 0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::config("eval.folds must be >= 2"));
        }
        if self.c_grid.is_empty() || self.c_grid.iter().any(|&c| !(c > 0.0 && c.is_finite())) {
            return Err(Error::config("eval.c_grid must be a non-empty list of positive numbers"));
        }
        if self.repetitions == 0 || self.iterations == 0 {
            return Err(Error::config("eval.repetitions and eval.iterations must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Accuracy {
    pub mean: f64,
    pub std: f64,
}

/// Fold index for every sample, with each class spread evenly over folds.
///
/// Samples are grouped by class, shuffled within the class, and dealt out
/// round-robin continuing across classes.
pub fn stratified_folds<R: Rng + ?Sized>(labels: &[usize], folds: usize, rng: &mut R) -> Vec<usize> {
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut assignment = vec![0; labels.len()];
    let mut position = 0;
    for c in 0..classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        members.shuffle(rng);
        for i in members {
            assignment[i] = position % folds;
            position += 1;
        }
    }
    assignment
}

/// Multinomial logistic regression weights, `[d + 1, K]` with the bias last.
#[derive(Clone, Debug)]
pub struct LogisticModel {
    pub weights: Tensor,
}

fn with_bias_column(x: &Tensor) -> Tensor {
    let (n, d) = (x.rows(), x.cols());
    let mut data = Vec::with_capacity(n * (d + 1));
    for i in 0..n {
        data.extend_from_slice(x.row(i));
        data.push(1.0);
    }
    Tensor::matrix(n, d + 1, data).expect("sized above")
}

/// Largest eigenvalue of `X Xᵀ` by power iteration from the ones vector.
fn gram_spectral_norm(x: &Tensor) -> f64 {
    let n = x.rows();
    let xt = x.transpose().expect("matrix");
    let mut v = Tensor::full(&[n, 1], 1.0 / (n as f64).sqrt());
    let mut lambda = 0.0;
    for _ in 0..50 {
        let u = x.matmul(&xt.matmul(&v).expect("conformant")).expect("conformant");
        let norm = u.data().iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        let next = u.map(|a| a / norm);
        let converged = (norm - lambda).abs() <= 1e-9 * norm;
        lambda = norm;
        v = next;
        if converged {
            break;
        }
    }
    lambda
}

/// Softmax probabilities minus one-hot targets, and the mean cross-entropy.
fn residual(logits: &Tensor, y: &[usize]) -> (Tensor, f64) {
    let k = logits.cols();
    let mut out = Tensor::zeros(logits.shape());
    let mut ce = 0.0;
    for (i, &label) in y.iter().enumerate() {
        let row = logits.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let o = out.row_mut(i);
        for j in 0..k {
            o[j] = (row[j] - max).exp() / total;
        }
        ce += total.ln() + max - row[label];
        o[label] -= 1.0;
    }
    (out, ce / y.len().max(1) as f64)
}

/// Stop once every gradient entry is below this.
const GRADIENT_TOLERANCE: f64 = 1e-6;

/// Minimizes `mean CE + ‖W‖²/(2Cn)` (bias unpenalized) by Nesterov-accelerated
/// gradient descent with step `1/L` and adaptive restart.
pub fn fit_logistic(x: &Tensor, y: &[usize], classes: usize, c: f64, iterations: usize) -> LogisticModel {
    fit_logistic_from(x, y, classes, c, iterations, None)
}

/// [`fit_logistic`] started from `init` weights instead of zeros.
pub fn fit_logistic_from(
    x: &Tensor,
    y: &[usize],
    classes: usize,
    c: f64,
    iterations: usize,
    init: Option<&Tensor>,
) -> LogisticModel {
    let xb = with_bias_column(x);
    let (n, d1) = (xb.rows(), xb.cols());
    let reg = 1.0 / (c * n.max(1) as f64);
    let lipschitz = 0.5 * gram_spectral_norm(&xb) / n.max(1) as f64 + reg;
    let step = if lipschitz > 0.0 { 1.0 / lipschitz } else { 1.0 };
    // class-major copies keep the inner loops contiguous
    let mut w = vec![0.0; classes * d1];
    if let Some(w0) = init.filter(|w0| w0.shape() == [d1, classes]) {
        for j in 0..d1 {
            for k in 0..classes {
                w[k * d1 + j] = w0.get(j, k);
            }
        }
    }
    let mut look = w.clone();
    let mut next = vec![0.0; classes * d1];
    let mut grad = vec![0.0; classes * d1];
    let mut prob = vec![0.0; classes];
    let mut t = 1.0f64;
    for _ in 0..iterations {
        grad.iter_mut().for_each(|g| *g = 0.0);
        for (i, &label) in y.iter().enumerate() {
            let row = xb.row(i);
            for (k, p) in prob.iter_mut().enumerate() {
                *p = dot(row, &look[k * d1..(k + 1) * d1]);
            }
            let max = prob.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for p in prob.iter_mut() {
                *p = (*p - max).exp();
                total += *p;
            }
            for (k, p) in prob.iter().enumerate() {
                let r = (p / total - if k == label { 1.0 } else { 0.0 }) / n as f64;
                for (g, v) in grad[k * d1..(k + 1) * d1].iter_mut().zip(row) {
                    *g += r * v;
                }
            }
        }
        for k in 0..classes {
            for j in 0..d1 - 1 {
                grad[k * d1 + j] += reg * look[k * d1 + j];
            }
        }
        if grad.iter().all(|g| g.abs() < GRADIENT_TOLERANCE) {
            w.copy_from_slice(&look);
            break;
        }
        let mut uphill = 0.0;
        for ((nx, (l, g)), wv) in next.iter_mut().zip(look.iter().zip(&grad)).zip(&w) {
            *nx = l - step * g;
            uphill += g * (*nx - wv);
        }
        // restart the momentum when it points uphill
        if uphill > 0.0 {
            t = 1.0;
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let momentum = (t - 1.0) / t_next;
        for ((l, nx), wv) in look.iter_mut().zip(&next).zip(&w) {
            *l = nx + momentum * (nx - wv);
        }
        std::mem::swap(&mut w, &mut next);
        t = t_next;
    }
    let mut weights = Tensor::zeros(&[d1, classes]);
    for j in 0..d1 {
        for k in 0..classes {
            weights.row_mut(j)[k] = w[k * d1 + j];
        }
    }
    LogisticModel { weights }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl LogisticModel {
    pub fn logits(&self, x: &Tensor) -> Tensor {
        with_bias_column(x).matmul(&self.weights).expect("conformant")
    }

    pub fn predict(&self, x: &Tensor) -> Vec<usize> {
        let logits = self.logits(x);
        (0..logits.rows())
            .map(|i| {
                let row = logits.row(i);
                (0..row.len()).fold(0, |best, j| if row[j] > row[best] { j } else { best })
            })
            .collect()
    }
}

fn select_rows(x: &Tensor, rows: &[usize]) -> Tensor {
    let d = x.cols();
    let mut data = Vec::with_capacity(rows.len() * d);
    for &r in rows {
        data.extend_from_slice(x.row(r));
    }
    Tensor::matrix(rows.len(), d, data).expect("sized above")
}

/// Centers with the training mean and divides by the training RMS norm.
///
/// A single scale keeps the transform rotation invariant.
fn standardize(train: &Tensor, test: &Tensor) -> (Tensor, Tensor) {
    let (n, d) = (train.rows(), train.cols());
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(train.row(i)) {
            *m += v / n as f64;
        }
    }
    let mut sq = 0.0;
    for i in 0..n {
        for (v, m) in train.row(i).iter().zip(&mean) {
            sq += (v - m) * (v - m);
        }
    }
    let rms = (sq / n.max(1) as f64).sqrt();
    let scale = if rms > 0.0 { 1.0 / rms } else { 1.0 };
    let apply = |x: &Tensor| {
        let mut out = x.clone();
        for i in 0..out.rows() {
            for (v, m) in out.row_mut(i).iter_mut().zip(&mean) {
                *v = (*v - m) * scale;
            }
        }
        out
    };
    (apply(train), apply(test))
}

fn accuracy(pred: &[usize], truth: &[usize]) -> f64 {
    let hits = pred.iter().zip(truth).filter(|(a, b)| a == b).count();
    hits as f64 / truth.len().max(1) as f64
}

/// Mean cross-entropy of `model` on `(x, y)`.
fn log_loss(model: &LogisticModel, x: &Tensor, y: &[usize]) -> f64 {
    residual(&model.logits(x), y).1
}

/// Picks `C` on a stratified holdout of roughly a fifth of the training rows.
pub fn select_c(x: &Tensor, y: &[usize], classes: usize, cfg: &EvalConfig, seed: u64) -> f64 {
    if cfg.c_grid.len() == 1 {
        return cfg.c_grid[0];
    }
    let holdout = stratified_folds(y, 5, &mut seeded(seed, streams::HOLDOUT));
    let fit_rows: Vec<usize> = (0..y.len()).filter(|&i| holdout[i] != 0).collect();
    let val_rows: Vec<usize> = (0..y.len()).filter(|&i| holdout[i] == 0).collect();
    if fit_rows.is_empty() || val_rows.is_empty() {
        return cfg.c_grid[0];
    }
    let (xf, xv) = standardize(&select_rows(x, &fit_rows), &select_rows(x, &val_rows));
    let yf: Vec<usize> = fit_rows.iter().map(|&i| y[i]).collect();
    let yv: Vec<usize> = val_rows.iter().map(|&i| y[i]).collect();
    let mut grid = cfg.c_grid.clone();
    grid.sort_by(f64::total_cmp);
    let mut best = (f64::NEG_INFINITY, f64::INFINITY, grid[0]);
    let mut previous: Option<Tensor> = None;
    // ascending C, each fit warm-started from the more regularized one
    for &c in &grid {
        let model = fit_logistic_from(&xf, &yf, classes, c, cfg.iterations, previous.as_ref());
        let acc = accuracy(&model.predict(&xv), &yv);
        let loss = log_loss(&model, &xv, &yv);
        if acc > best.0 || (acc == best.0 && loss < best.1) {
            best = (acc, loss, c);
        }
        previous = Some(model.weights);
    }
    best.2
}

/// Test accuracy of every fold for one fold assignment.
pub fn cross_validate(
    x: &Tensor,
    labels: &[usize],
    assignment: &[usize],
    cfg: &EvalConfig,
    seed: u64,
) -> Vec<f64> {
    let classes = labels.iter().max().map_or(1, |m| m + 1);
    (0..cfg.folds)
        .into_par_iter()
        .map(|fold| {
            let train: Vec<usize> = (0..labels.len()).filter(|&i| assignment[i] != fold).collect();
            let test: Vec<usize> = (0..labels.len()).filter(|&i| assignment[i] == fold).collect();
            if test.is_empty() {
                return None;
            }
            let y_train: Vec<usize> = train.iter().map(|&i| labels[i]).collect();
            let y_test: Vec<usize> = test.iter().map(|&i| labels[i]).collect();
            let present = |c: usize| y_train.contains(&c);
            if let Some(missing) = (0..classes).find(|&c| !present(c) && labels.contains(&c)) {
                log::warn!("class {missing} is absent from the training part of fold {fold}");
            }
            let x_train = select_rows(x, &train);
            let c = select_c(&x_train, &y_train, classes, cfg, seed.wrapping_add(fold as u64));
            let (xs_train, xs_test) = standardize(&x_train, &select_rows(x, &test));
            let model = fit_logistic(&xs_train, &y_train, classes, c, cfg.iterations);
            Some(accuracy(&model.predict(&xs_test), &y_test))
        })
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect()
}

fn mean_std(values: &[f64]) -> Accuracy {
    let n = values.len().max(1) as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Accuracy {
        mean,
        std: var.sqrt(),
    }
}

/// Trimmed cross-validated accuracy of a linear classifier on `embeddings`.
///
/// `std` is the spread of fold accuracies over the kept repetitions.
pub fn evaluate_linear(embeddings: &Tensor, labels: &[usize], cfg: &EvalConfig) -> Result<Accuracy> {
    cfg.validate()?;
    let (n, _) = embeddings.dims2("evaluate_linear")?;
    if n != labels.len() {
        return Err(Error::Shape {
            op: "evaluate_linear",
            lhs: vec![n],
            rhs: vec![labels.len()],
        });
    }
    if n < cfg.folds {
        return Err(Error::contract(format!(
            "{n} samples cannot fill {} folds",
            cfg.folds
        )));
    }
    if !embeddings.is_finite() {
        return Err(Error::contract("embeddings contain non-finite values"));
    }
    let mut runs: Vec<Vec<f64>> = (0..cfg.repetitions as u64)
        .map(|r| {
            let seed = cfg.seed.wrapping_add(r);
            let assignment = stratified_folds(labels, cfg.folds, &mut seeded(seed, streams::FOLDS));
            cross_validate(embeddings, labels, &assignment, cfg, seed)
        })
        .collect();
    if runs.len() >= 3 {
        let mean_of = |r: &Vec<f64>| r.iter().sum::<f64>() / r.len().max(1) as f64;
        let order = |a: &Vec<f64>, b: &Vec<f64>| mean_of(a).total_cmp(&mean_of(b));
        let hi = (0..runs.len()).max_by(|&a, &b| order(&runs[a], &runs[b])).expect("non-empty");
        runs.remove(hi);
        let lo = (0..runs.len()).min_by(|&a, &b| order(&runs[a], &runs[b])).expect("non-empty");
        runs.remove(lo);
    }
    let kept: Vec<f64> = runs.into_iter().flatten().collect();
    Ok(mean_std(&kept))
}

/// Mean absolute error between predictions and targets of equal shape.
pub fn mean_absolute_error(pred: &Tensor, target: &Tensor) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::Shape {
            op: "mean_absolute_error",
            lhs: pred.shape().to_vec(),
            rhs: target.shape().to_vec(),
        });
    }
    let total: f64 = pred.data().iter().zip(target.data()).map(|(a, b)| (a - b).abs()).sum();
    Ok(total / pred.len().max(1) as f64)
}
