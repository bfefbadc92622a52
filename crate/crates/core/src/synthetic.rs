//! Seeded synthetic graph datasets with planted motifs.
//!
//! Each graph is a random tree with a few extra chords, plus one motif glued
//! on by a single edge. The motif depends on the class, so graph structure
//! alone separates the classes.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::autodiff::Tensor;
use crate::graph::{symmetrize, Graph, Label};
use crate::seed::{seeded, streams};

/// Box–Muller standard normal.
fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

const MOTIF_COUNT: usize = 5;

/// Undirected edges of the motif for `class`, on nodes `0..size`.
fn motif(class: usize) -> (usize, Vec<(usize, usize)>) {
    let cycle = |n: usize| (n, (0..n).map(|i| (i, (i + 1) % n)).collect::<Vec<_>>());
    match class {
        0 => cycle(6),
        1 => {
            let mut e = Vec::new();
            for i in 0..4 {
                for j in i + 1..4 {
                    e.push((i, j));
                }
            }
            (4, e)
        }
        2 => (6, (1..6).map(|i| (0, i)).collect()),
        // house: a square with a roof
        3 => (5, vec![(0, 1), (1, 2), (2, 3), (3, 0), (0, 4), (1, 4)]),
        // wheel: hub joined to a 5-cycle
        4 => {
            let mut e: Vec<_> = (1..6).map(|i| (0, i)).collect();
            e.extend((0..5).map(|i| (1 + i, 1 + (i + 1) % 5)));
            (6, e)
        }
        c => cycle(c - MOTIF_COUNT + 7),
    }
}

fn random_base<R: Rng>(rng: &mut R) -> (usize, Vec<(usize, usize)>) {
    let n = rng.gen_range(8..=16);
    let mut edges: Vec<(usize, usize)> = (1..n).map(|v| (rng.gen_range(0..v), v)).collect();
    for _ in 0..rng.gen_range(0..=2) {
        let (u, v) = (rng.gen_range(0..n), rng.gen_range(0..n));
        if u != v && !edges.contains(&(u, v)) && !edges.contains(&(v, u)) {
            edges.push((u, v));
        }
    }
    (n, edges)
}

fn plant<R: Rng>(rng: &mut R, motifs: &[usize]) -> (usize, Vec<(usize, usize)>) {
    let (mut n, mut edges) = random_base(rng);
    let base = n;
    for &m in motifs {
        let (size, medges) = motif(m);
        edges.extend(medges.iter().map(|&(u, v)| (u + n, v + n)));
        edges.push((rng.gen_range(0..base), n + rng.gen_range(0..size)));
        n += size;
    }
    (n, edges)
}

/// `num_graphs` unattributed graphs with balanced class labels.
pub fn synthetic_dataset(seed: u64, num_graphs: usize, num_classes: usize) -> Vec<Graph> {
    let num_classes = num_classes.max(1);
    let mut rng = seeded(seed, streams::SYNTHETIC);
    let mut labels: Vec<usize> = (0..num_graphs).map(|i| i % num_classes).collect();
    labels.shuffle(&mut rng);
    labels
        .into_iter()
        .map(|class| {
            let (n, pairs) = plant(&mut rng, &[class]);
            let (edges, _) = symmetrize(&pairs, None).expect("no attributes");
            Graph::new(n, edges, None, None, Some(Label::Class(class))).expect("valid graph")
        })
        .collect()
}

/// Graphs with two edge types and a z-scored scalar target.
///
/// The raw target counts planted 4-cliques, plus a small node-count term and
/// Gaussian noise; targets are normalized to zero mean and unit variance over
/// the returned set.
pub fn synthetic_regression(seed: u64, num_graphs: usize) -> Vec<Graph> {
    let mut rng = seeded(seed, streams::SYNTHETIC_REGRESSION);
    let mut raw = Vec::with_capacity(num_graphs);
    let mut graphs = Vec::with_capacity(num_graphs);
    for _ in 0..num_graphs {
        let cliques = rng.gen_range(0..=3);
        let motifs = vec![1; cliques];
        let (n, pairs) = plant(&mut rng, &motifs);
        let kinds: Vec<f64> = pairs.iter().map(|_| f64::from(rng.gen_range(0..2u8))).collect();
        let mut attrs = Tensor::zeros(&[pairs.len(), 2]);
        for (k, &kind) in kinds.iter().enumerate() {
            attrs.row_mut(k)[kind as usize] = 1.0;
        }
        let (edges, attrs) = symmetrize(&pairs, Some(&attrs)).expect("attribute rows");
        raw.push(cliques as f64 + 0.05 * n as f64 + 0.1 * normal(&mut rng));
        graphs.push(Graph::new(n, edges, None, attrs, None).expect("valid graph"));
    }
    let mean = raw.iter().sum::<f64>() / raw.len().max(1) as f64;
    let var = raw.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / raw.len().max(1) as f64;
    let std = if var > 0.0 { var.sqrt() } else { 1.0 };
    for (g, t) in graphs.iter_mut().zip(raw) {
        g.label = Some(Label::Target(vec![(t - mean) / std]));
    }
    graphs
}
