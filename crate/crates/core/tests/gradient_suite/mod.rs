//! Finite-difference checks shared by the gradient tests and the acceptance run.

#![allow(dead_code)]

use std::sync::Arc;

use crate::common::{gradient_error, random, random_away_from_zero, rng, uniform_usize};
use sgmi::autodiff::{ParameterStore, Tape, Tensor, Var};
use sgmi::encoder::{EncoderConfig, Readout};
use sgmi::graph::{make_batch, Graph, GraphBatch, Label};
use sgmi::model::{Model, ModelConfig, Task};
use sgmi::objective::{dv_loss, jsd_loss, semi_supervised_loss, unsupervised_loss, Estimator};
use sgmi::seed::seeded;
use sgmi::subgraph::GeneratorKind;
use sgmi::Result;

const SEEDS: u64 = 20;
const TOLERANCE: f64 = 1e-4;

fn check<F>(name: &str, make_inputs: impl Fn(u64) -> Vec<Tensor>, build: F)
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var> + Copy,
{
    for seed in 0..SEEDS {
        let inputs = make_inputs(seed);
        let err = gradient_error(&inputs, build);
        assert!(err <= TOLERANCE, "{name}, seed {seed}: relative error {err:e}");
    }
}

fn one(shape: &[usize]) -> impl Fn(u64) -> Vec<Tensor> + '_ {
    move |s| vec![random(shape, &mut rng(s))]
}

fn two<'a>(a: &'a [usize], b: &'a [usize]) -> impl Fn(u64) -> Vec<Tensor> + 'a {
    move |s| {
        let mut r = rng(s);
        vec![random(a, &mut r), random(b, &mut r)]
    }
}

pub fn matmul() {
    check("matmul", two(&[3, 4], &[4, 2]), |t, v| t.matmul(v[0], v[1]));
}

pub fn transpose_and_reshape() {
    check("transpose", one(&[3, 4]), |t, v| t.transpose(v[0]));
    check("reshape", one(&[3, 4]), |t, v| t.reshape(v[0], vec![12, 1]));
}

pub fn add_sub_mul_with_broadcasts() {
    for b in [&[3usize, 4][..], &[1, 4], &[4], &[3, 1], &[1]] {
        check("add", two(&[3, 4], b), |t, v| t.add(v[0], v[1]));
        check("sub", two(&[3, 4], b), |t, v| t.sub(v[0], v[1]));
        check("mul", two(&[3, 4], b), |t, v| t.mul(v[0], v[1]));
    }
}

pub fn scale_and_neg() {
    check("scale", one(&[3, 4]), |t, v| Ok(t.scale(v[0], -1.7)));
    check("neg", one(&[3, 4]), |t, v| Ok(t.neg(v[0])));
}

pub fn relu() {
    check(
        "relu",
        |s| vec![random_away_from_zero(&[3, 4], 0.05, &mut rng(s))],
        |t, v| Ok(t.relu(v[0])),
    );
}

pub fn softmax_and_log_softmax() {
    check("softmax_rows", one(&[3, 4]), |t, v| t.softmax_rows(v[0]));
    check("log_softmax_rows", one(&[3, 4]), |t, v| t.log_softmax_rows(v[0]));
}

pub fn softplus_log_exp() {
    let wide = |s| vec![random(&[3, 4], &mut rng(s)).map(|x| 8.0 * x)];
    check("softplus", wide, |t, v| Ok(t.softplus(v[0])));
    check(
        "log",
        |s| vec![random(&[3, 4], &mut rng(s)).map(|x| 0.5 + x.abs())],
        |t, v| Ok(t.log(v[0])),
    );
    check("exp", one(&[3, 4]), |t, v| Ok(t.exp(v[0])));
}

pub fn stack_rows() {
    check(
        "stack_rows",
        |s| {
            let mut r = rng(s);
            vec![random(&[2, 4], &mut r), random(&[3, 4], &mut r), random(&[1, 4], &mut r)]
        },
        |t, v| t.stack_rows(v),
    );
}

fn indices(seed: u64, count: usize, upper: usize) -> Arc<[usize]> {
    let mut r = rng(seed + 1000);
    (0..count).map(|_| uniform_usize(&mut r, upper)).collect()
}

pub fn gather_scatter_segments() {
    for seed in 0..SEEDS {
        let x = vec![random(&[5, 3], &mut rng(seed))];
        let idx = indices(seed, 7, 5);
        let err = gradient_error(&x, |t, v| t.gather_rows(v[0], idx.clone()));
        assert!(err <= TOLERANCE, "gather_rows seed {seed}: {err:e}");
        let idx = indices(seed, 5, 4);
        let err = gradient_error(&x, |t, v| t.scatter_add_rows(v[0], idx.clone(), 4));
        assert!(err <= TOLERANCE, "scatter_add_rows seed {seed}: {err:e}");
        let segments: Arc<[usize]> = vec![0, 0, 1, 2, 2].into();
        let err = gradient_error(&x, |t, v| t.row_sum_segments(v[0], segments.clone(), 3));
        assert!(err <= TOLERANCE, "row_sum_segments seed {seed}: {err:e}");
    }
}

pub fn reductions() {
    check("sum", one(&[3, 4]), |t, v| Ok(t.sum(v[0])));
    check("mean", one(&[3, 4]), |t, v| t.mean(v[0]));
    check("row_sums", one(&[3, 4]), |t, v| t.row_sums(v[0]));
    check("column", one(&[3, 4]), |t, v| t.column(v[0], 2));
    check(
        "log_sum_exp",
        |s| vec![random(&[3, 4], &mut rng(s)).map(|x| 30.0 * x)],
        |t, v| t.log_sum_exp(v[0]),
    );
}

pub fn combine() {
    check(
        "combine",
        |s| {
            let mut r = rng(s);
            vec![
                random(&[3, 4], &mut r),
                random(&[3, 4], &mut r),
                random(&[3, 4], &mut r),
                random(&[3], &mut r),
                random(&[1], &mut r),
            ]
        },
        |t, v| t.combine(&v[..3], v[3], v[4]),
    );
}

fn score_inputs(seed: u64) -> Vec<Tensor> {
    let mut r = rng(seed);
    let wide = |t: Tensor| t.map(|x| 3.0 * x);
    vec![
        wide(random(&[4, 1], &mut r)),
        wide(random(&[4, 1], &mut r)),
        wide(random(&[12, 1], &mut r)),
    ]
}

pub fn jsd_estimator() {
    check("jsd_loss", score_inputs, |t, v| Ok(jsd_loss(t, v[0], v[1], v[2])?.total));
}

pub fn dv_estimator() {
    check("dv_loss", score_inputs, |t, v| Ok(dv_loss(t, v[0], v[1], v[2])?.total));
}

/// Central differences of `f` with respect to every stored parameter.
fn parameter_error(model: &Model, f: impl Fn(&Model) -> Result<(Tape, Var)>) -> f64 {
    let (tape, loss) = f(model).unwrap();
    let mut store = model.store.clone();
    store.zero_grads();
    tape.backward(loss, &mut store).unwrap();
    let mut worst = 0.0f64;
    let ids: Vec<_> = model.store.iter().map(|(id, _)| id).collect();
    for id in ids {
        let analytic = store.grad(id).clone();
        let mut numeric = Tensor::zeros_like(&analytic);
        for i in 0..analytic.len() {
            let eval = |delta: f64| {
                let mut m = model.clone();
                m.store.value_mut(id).data_mut()[i] += delta;
                let (tape, loss) = f(&m).unwrap();
                tape.value(loss).item()
            };
            numeric.data_mut()[i] = (eval(crate::common::FD_STEP) - eval(-crate::common::FD_STEP)) / (2.0 * crate::common::FD_STEP);
        }
        worst = worst.max(crate::common::relative_error(&analytic, &numeric));
    }
    worst
}

fn toy_graphs(seed: u64, with_labels: bool) -> Vec<Graph> {
    let mut r = rng(seed + 77);
    let shapes: [(usize, &[(usize, usize)]); 3] = [
        (3, &[(0, 1), (1, 2)]),
        (4, &[(0, 1), (1, 2), (2, 3), (3, 0)]),
        (3, &[(0, 1), (0, 2), (1, 2)]),
    ];
    shapes
        .iter()
        .enumerate()
        .map(|(i, (n, pairs))| {
            let g = Graph::undirected(*n, pairs).unwrap();
            let x = random(&[*n, 3], &mut r);
            let e = random(&[g.edges.len(), 2], &mut r);
            let mut g = Graph::new(g.num_nodes, g.edges, Some(x), Some(e), None).unwrap();
            if with_labels {
                g.label = Some(Label::Class(i % 2));
            }
            g
        })
        .collect()
}

fn toy_model(seed: u64, generator: GeneratorKind, task: Option<Task>) -> Model {
    let cfg = ModelConfig {
        encoder: EncoderConfig {
            input_dim: 3,
            edge_dim: Some(2),
            hidden: 4,
            layers: 2,
            readout: Readout::Sum,
        },
        generator,
        task,
        max_degree: None,
    };
    let mut model = Model::new(cfg, seed).unwrap();
    // move the kernels off their averaging start so every path is exercised
    let mut r = rng(seed + 5);
    let ids: Vec<_> = model.store.iter().map(|(id, _)| id).collect();
    for id in ids {
        let v = model.store.value_mut(id);
        if v.len() <= 4 {
            *v = random(v.shape(), &mut r);
        }
    }
    model
}

fn unsupervised(batch: &GraphBatch, estimator: Estimator) -> impl Fn(&Model) -> Result<(Tape, Var)> + '_ {
    move |m| {
        let mut tape = Tape::new();
        let (loss, _) = unsupervised_loss(&mut tape, m, batch, estimator, &mut seeded(9, 9))?;
        Ok((tape, loss))
    }
}

pub fn unsupervised_losses_wrt_parameters() {
    for seed in 0..SEEDS {
        let batch = make_batch(&toy_graphs(seed, false)).unwrap();
        let generator = if seed % 2 == 0 {
            GeneratorKind::TreeSplit { depth: 2 }
        } else {
            GeneratorKind::MultiHead { heads: 3 }
        };
        let model = toy_model(seed, generator, None);
        for estimator in [Estimator::Jsd, Estimator::Dv] {
            let err = parameter_error(&model, unsupervised(&batch, estimator));
            assert!(err <= TOLERANCE, "{estimator:?} seed {seed}: {err:e}");
        }
    }
}

pub fn semi_supervised_loss_wrt_parameters() {
    for seed in 0..SEEDS {
        let graphs = toy_graphs(seed, true);
        let labeled = make_batch(&graphs[..2]).unwrap();
        let unlabeled = make_batch(&graphs).unwrap();
        let task = Task::Classification { classes: 2 };
        let model = toy_model(seed, GeneratorKind::TreeSplit { depth: 1 }, Some(task));
        let err = parameter_error(&model, |m| {
            let mut tape = Tape::new();
            let (loss, _) = semi_supervised_loss(
                &mut tape,
                m,
                &labeled,
                Some(&unlabeled),
                0.5,
                Estimator::Jsd,
                &mut seeded(3, 3),
            )?;
            Ok((tape, loss))
        });
        assert!(err <= TOLERANCE, "classification seed {seed}: {err:e}");
    }
}

pub fn regression_loss_wrt_parameters() {
    for seed in 0..SEEDS {
        let mut graphs = toy_graphs(seed, false);
        for (i, g) in graphs.iter_mut().enumerate() {
            g.label = Some(Label::Target(vec![i as f64 - 1.0, 0.5]));
        }
        let batch = make_batch(&graphs).unwrap();
        let model = toy_model(seed, GeneratorKind::TreeSplit { depth: 1 }, Some(Task::Regression { targets: 2 }));
        let err = parameter_error(&model, |m| {
            let mut tape = Tape::new();
            let (loss, _) = semi_supervised_loss(&mut tape, m, &batch, None, 0.0, Estimator::Jsd, &mut seeded(0, 0))?;
            Ok((tape, loss))
        });
        assert!(err <= TOLERANCE, "regression seed {seed}: {err:e}");
    }
}

pub fn split_operator_gradient_is_nonzero() {
    let batch = make_batch(&toy_graphs(1, false)).unwrap();
    let model = toy_model(1, GeneratorKind::TreeSplit { depth: 2 }, None);
    let (tape, loss) = unsupervised(&batch, Estimator::Jsd)(&model).unwrap();
    let mut store: ParameterStore = model.store.clone();
    store.zero_grads();
    tape.backward(loss, &mut store).unwrap();
    for op in &model.generator.operators {
        assert!(store.grad(op.weight).max_abs() > 0.0);
    }
}

pub fn backward_is_deterministic() {
    let batch = make_batch(&toy_graphs(2, false)).unwrap();
    let model = toy_model(2, GeneratorKind::TreeSplit { depth: 2 }, None);
    let run = || {
        let (tape, loss) = unsupervised(&batch, Estimator::Jsd)(&model).unwrap();
        let mut store = model.store.clone();
        store.zero_grads();
        tape.backward(loss, &mut store).unwrap();
        store
    };
    assert_eq!(run(), run());
}

/// Every finite-difference check, by name.
pub const ALL: &[(&str, fn())] = &[
    ("matmul", matmul),
    ("transpose_and_reshape", transpose_and_reshape),
    ("add_sub_mul_with_broadcasts", add_sub_mul_with_broadcasts),
    ("scale_and_neg", scale_and_neg),
    ("relu", relu),
    ("softmax_and_log_softmax", softmax_and_log_softmax),
    ("softplus_log_exp", softplus_log_exp),
    ("stack_rows", stack_rows),
    ("gather_scatter_segments", gather_scatter_segments),
    ("reductions", reductions),
    ("combine", combine),
    ("jsd_estimator", jsd_estimator),
    ("dv_estimator", dv_estimator),
    ("unsupervised_losses_wrt_parameters", unsupervised_losses_wrt_parameters),
    ("semi_supervised_loss_wrt_parameters", semi_supervised_loss_wrt_parameters),
    ("regression_loss_wrt_parameters", regression_loss_wrt_parameters),
];
