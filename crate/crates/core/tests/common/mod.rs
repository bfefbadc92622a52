#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sgmi::autodiff::{Tape, Tensor, Var};
use sgmi::graph::Graph;
use sgmi::Result;

pub const FD_STEP: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::uniform(shape, 1.0, rng)
}

/// Random values whose magnitudes stay at least `gap` away from zero, so
/// kinks (ReLU) are never straddled by a finite-difference step.
pub fn random_away_from_zero(shape: &[usize], gap: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let mut t = random(shape, rng);
    for v in t.data_mut() {
        let sign = if *v < 0.0 { -1.0 } else { 1.0 };
        *v = sign * (gap + v.abs());
    }
    t
}

/// Reduces an arbitrary output to a scalar with fixed random weights so every
/// output entry contributes to the checked gradient.
fn scalarize(tape: &mut Tape, out: Var, weights_seed: u64) -> Result<Var> {
    let value = tape.value(out);
    if value.len() == 1 {
        return Ok(out);
    }
    let mut r = rng(weights_seed);
    let w = Tensor::uniform(value.shape(), 1.0, &mut r);
    let w = tape.constant(w);
    let prod = tape.mul(out, w)?;
    Ok(tape.sum(prod))
}

/// Largest normwise relative error, over all inputs, between tape gradients
/// and central finite differences of the same function.
pub fn gradient_error<F>(inputs: &[Tensor], build: F) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = build(&mut tape, &vars).expect("forward");
        let loss = scalarize(&mut tape, out, 7).expect("scalarize");
        tape.value(loss).item()
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = build(&mut tape, &vars).expect("forward");
    let loss = scalarize(&mut tape, out, 7).expect("scalarize");
    let grads = tape.gradients(loss).expect("backward");

    let mut worst = 0.0f64;
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads
            .get(vars[k])
            .cloned()
            .unwrap_or_else(|| Tensor::zeros_like(input));
        let mut numeric = Tensor::zeros_like(input);
        for i in 0..input.len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= FD_STEP;
            numeric.data_mut()[i] = (eval(&plus) - eval(&minus)) / (2.0 * FD_STEP);
        }
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    worst
}

pub fn relative_error(a: &Tensor, b: &Tensor) -> f64 {
    let diff = a
        .data()
        .iter()
        .zip(b.data())
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    let scale = a.max_abs().max(b.max_abs()).max(1e-8);
    diff / scale
}

pub fn uniform_usize(rng: &mut ChaCha8Rng, upper: usize) -> usize {
    rng.gen_range(0..upper)
}

/// Undirected graph on `n` nodes with each pair joined with probability `p`,
/// uniform node attributes of width `node_dim` and, when `edge_dim > 0`,
/// symmetric edge attributes.
pub fn random_graph(n: usize, p: f64, node_dim: usize, edge_dim: usize, rng: &mut ChaCha8Rng) -> Graph {
    let mut edges = Vec::new();
    let mut attrs = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.gen_bool(p) {
                let e: Vec<f64> = (0..edge_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
                edges.push((u, v));
                edges.push((v, u));
                attrs.extend_from_slice(&e);
                attrs.extend_from_slice(&e);
            }
        }
    }
    let x = random(&[n, node_dim], rng);
    let e = (edge_dim > 0).then(|| Tensor::matrix(edges.len(), edge_dim, attrs).unwrap());
    Graph::new(n, edges, Some(x), e, None).unwrap()
}

/// Plain row-major copy of a matrix.
pub fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}

pub fn max_abs_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    assert_eq!(a.len(), b.len(), "row counts differ");
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| {
            assert_eq!(x.len(), y.len(), "row widths differ");
            x.iter().zip(y).map(|(p, q)| (p - q).abs())
        })
        .fold(0.0, f64::max)
}
