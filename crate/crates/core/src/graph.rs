//! Graphs, block-diagonal batches and degree features.

use std::collections::HashSet;
use std::sync::Arc;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum Label {
    Class(usize),
    Target(Vec<f64>),
}

impl Label {
    pub fn class(&self) -> Option<usize> {
        match self {
            Label::Class(c) => Some(*c),
            Label::Target(_) => None,
        }
    }
}

/// A graph with 0-indexed directed edge pairs.
///
/// Undirected graphs store both `(u, v)` and `(v, u)`; `edge_attrs` has one
/// row per stored pair.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    pub num_nodes: usize,
    pub edges: Vec<(usize, usize)>,
    pub node_attrs: Option<Tensor>,
    pub edge_attrs: Option<Tensor>,
    pub label: Option<Label>,
}

impl Graph {
    pub fn new(
        num_nodes: usize,
        edges: Vec<(usize, usize)>,
        node_attrs: Option<Tensor>,
        edge_attrs: Option<Tensor>,
        label: Option<Label>,
    ) -> Result<Self> {
        let g = Self {
            num_nodes,
            edges,
            node_attrs,
            edge_attrs,
            label,
        };
        g.validate()?;
        Ok(g)
    }

    /// Builds an undirected graph from one direction of each edge.
    pub fn undirected(num_nodes: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        let (edges, _) = symmetrize(pairs, None)?;
        Self::new(num_nodes, edges, None, None, None)
    }

    pub fn with_label(mut self, label: Label) -> Self {
        self.label = Some(label);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(&(u, v)) = self
            .edges
            .iter()
            .find(|&&(u, v)| u >= self.num_nodes || v >= self.num_nodes)
        {
            return Err(Error::Index {
                op: "graph edge",
                index: u.max(v),
                size: self.num_nodes,
            });
        }
        if let Some(x) = &self.node_attrs {
            let (r, _) = x.dims2("node_attrs")?;
            if r != self.num_nodes {
                return Err(Error::Shape {
                    op: "node_attrs",
                    lhs: vec![self.num_nodes],
                    rhs: x.shape().to_vec(),
                });
            }
        }
        if let Some(x) = &self.edge_attrs {
            let (r, _) = x.dims2("edge_attrs")?;
            if r != self.edges.len() {
                return Err(Error::Shape {
                    op: "edge_attrs",
                    lhs: vec![self.edges.len()],
                    rhs: x.shape().to_vec(),
                });
            }
        }
        Ok(())
    }

    pub fn is_symmetric(&self) -> bool {
        let set: HashSet<_> = self.edges.iter().copied().collect();
        self.edges.iter().all(|&(u, v)| set.contains(&(v, u)))
    }

    /// Undirected edge count: self-loops count once, other pairs twice.
    pub fn num_undirected_edges(&self) -> f64 {
        let loops = self.edges.iter().filter(|(u, v)| u == v).count();
        loops as f64 + (self.edges.len() - loops) as f64 / 2.0
    }

    /// Number of stored edges leaving each node.
    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.num_nodes];
        for &(u, _) in &self.edges {
            deg[u] += 1;
        }
        deg
    }

    /// Relabels node `v` as `perm[v]`, moving attribute rows along.
    pub fn relabeled(&self, perm: &[usize]) -> Result<Graph> {
        if perm.len() != self.num_nodes {
            return Err(Error::contract("permutation length differs from node count"));
        }
        let edges = self.edges.iter().map(|&(u, v)| (perm[u], perm[v])).collect();
        let node_attrs = match &self.node_attrs {
            Some(x) => {
                let mut out = Tensor::zeros_like(x);
                for (old, &new) in perm.iter().enumerate() {
                    out.row_mut(new).copy_from_slice(x.row(old));
                }
                Some(out)
            }
            None => None,
        };
        Graph::new(
            self.num_nodes,
            edges,
            node_attrs,
            self.edge_attrs.clone(),
            self.label.clone(),
        )
    }
}

/// Removes duplicate pairs (first occurrence wins) and adds any missing
/// reverse pair, copying the attribute row of its partner.
pub fn symmetrize(
    pairs: &[(usize, usize)],
    attrs: Option<&Tensor>,
) -> Result<(Vec<(usize, usize)>, Option<Tensor>)> {
    let mut seen = HashSet::new();
    let mut kept = Vec::new();
    for (i, &e) in pairs.iter().enumerate() {
        if seen.insert(e) {
            kept.push((e, i));
        }
    }
    let mut extra = Vec::new();
    for &((u, v), i) in &kept {
        if !seen.contains(&(v, u)) {
            seen.insert((v, u));
            extra.push(((v, u), i));
        }
    }
    kept.extend(extra);
    let edges = kept.iter().map(|&(e, _)| e).collect();
    let attrs = match attrs {
        Some(x) => {
            let (_, c) = x.dims2("edge_attrs")?;
            let mut data = Vec::with_capacity(kept.len() * c);
            for &(_, i) in &kept {
                data.extend_from_slice(x.row(i));
            }
            Some(Tensor::matrix(kept.len(), c, data)?)
        }
        None => None,
    };
    Ok((edges, attrs))
}

pub fn max_degree<'a>(graphs: impl IntoIterator<Item = &'a Graph>) -> usize {
    graphs
        .into_iter()
        .flat_map(|g| g.degrees())
        .max()
        .unwrap_or(0)
}

/// One-hot encoding of each node's degree, clamped to `max_degree`.
pub fn degree_features(graph: &Graph, max_degree: usize) -> Tensor {
    let width = max_degree + 1;
    let mut x = Tensor::zeros(&[graph.num_nodes, width]);
    for (v, d) in graph.degrees().into_iter().enumerate() {
        x.row_mut(v)[d.min(max_degree)] = 1.0;
    }
    x
}

/// Fills missing node attributes with degree one-hots.
pub fn ensure_node_features(graphs: &mut [Graph], max_degree: usize) {
    for g in graphs.iter_mut().filter(|g| g.node_attrs.is_none()) {
        g.node_attrs = Some(degree_features(g, max_degree));
    }
}

/// Summary statistics, always recomputed from the graphs themselves.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetMeta {
    pub name: String,
    pub num_graphs: usize,
    pub num_classes: usize,
    pub avg_nodes: f64,
    pub avg_edges: f64,
    pub has_node_attrs: bool,
    pub has_edge_attrs: bool,
}

impl DatasetMeta {
    pub fn compute(name: &str, graphs: &[Graph]) -> Self {
        let n = graphs.len().max(1) as f64;
        let classes: HashSet<usize> = graphs
            .iter()
            .filter_map(|g| g.label.as_ref().and_then(Label::class))
            .collect();
        Self {
            name: name.to_string(),
            num_graphs: graphs.len(),
            num_classes: classes.len(),
            avg_nodes: graphs.iter().map(|g| g.num_nodes as f64).sum::<f64>() / n,
            avg_edges: graphs.iter().map(Graph::num_undirected_edges).sum::<f64>() / n,
            has_node_attrs: !graphs.is_empty() && graphs.iter().all(|g| g.node_attrs.is_some()),
            has_edge_attrs: !graphs.is_empty() && graphs.iter().all(|g| g.edge_attrs.is_some()),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub graphs: Vec<Graph>,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn new(name: &str, graphs: Vec<Graph>) -> Self {
        let meta = DatasetMeta::compute(name, &graphs);
        Self { graphs, meta }
    }

    pub fn class_labels(&self) -> Result<Vec<usize>> {
        self.graphs
            .iter()
            .enumerate()
            .map(|(i, g)| {
                g.label
                    .as_ref()
                    .and_then(Label::class)
                    .ok_or_else(|| Error::contract(format!("graph {i} has no class label")))
            })
            .collect()
    }
}

/// Several graphs merged into one block-diagonal graph.
#[derive(Clone, Debug)]
pub struct GraphBatch {
    pub num_graphs: usize,
    pub num_nodes: usize,
    /// First node of each graph; `node_offsets[num_graphs] == num_nodes`.
    pub node_offsets: Vec<usize>,
    pub edge_offsets: Vec<usize>,
    /// Graph index of each node, non-decreasing.
    pub graph_id: Arc<[usize]>,
    pub src: Arc<[usize]>,
    pub dst: Arc<[usize]>,
    pub node_attrs: Option<Tensor>,
    pub edge_attrs: Option<Tensor>,
    pub labels: Vec<Option<Label>>,
}

fn concat_rows(parts: &[&Tensor], op: &'static str) -> Result<Tensor> {
    let cols = parts[0].cols();
    let mut data = Vec::new();
    let mut rows = 0;
    for p in parts {
        if p.cols() != cols {
            return Err(Error::contract(format!(
                "{op}: mixed attribute widths {cols} and {}",
                p.cols()
            )));
        }
        rows += p.rows();
        data.extend_from_slice(p.data());
    }
    Tensor::matrix(rows, cols, data)
}

fn collect_attrs<'a>(
    attrs: impl Iterator<Item = Option<&'a Tensor>>,
    op: &'static str,
) -> Result<Option<Tensor>> {
    let attrs: Vec<Option<&Tensor>> = attrs.collect();
    if attrs.iter().all(Option::is_none) {
        return Ok(None);
    }
    if attrs.iter().any(Option::is_none) {
        return Err(Error::contract(format!(
            "{op}: some graphs carry attributes and some do not"
        )));
    }
    let parts: Vec<&Tensor> = attrs.into_iter().flatten().collect();
    concat_rows(&parts, op).map(Some)
}

pub fn make_batch<'a, I>(graphs: I) -> Result<GraphBatch>
where
    I: IntoIterator<Item = &'a Graph>,
{
    let graphs: Vec<&Graph> = graphs.into_iter().collect();
    if graphs.is_empty() {
        return Err(Error::contract("make_batch needs at least one graph"));
    }
    let mut node_offsets = Vec::with_capacity(graphs.len() + 1);
    let mut edge_offsets = Vec::with_capacity(graphs.len() + 1);
    let mut graph_id = Vec::new();
    let mut src = Vec::new();
    let mut dst = Vec::new();
    let (mut nodes, mut edges) = (0, 0);
    for (gi, g) in graphs.iter().enumerate() {
        node_offsets.push(nodes);
        edge_offsets.push(edges);
        graph_id.extend(std::iter::repeat(gi).take(g.num_nodes));
        for &(u, v) in &g.edges {
            src.push(u + nodes);
            dst.push(v + nodes);
        }
        nodes += g.num_nodes;
        edges += g.edges.len();
    }
    node_offsets.push(nodes);
    edge_offsets.push(edges);
    Ok(GraphBatch {
        num_graphs: graphs.len(),
        num_nodes: nodes,
        node_offsets,
        edge_offsets,
        graph_id: graph_id.into(),
        src: src.into(),
        dst: dst.into(),
        node_attrs: collect_attrs(graphs.iter().map(|g| g.node_attrs.as_ref()), "make_batch")?,
        edge_attrs: collect_attrs(graphs.iter().map(|g| g.edge_attrs.as_ref()), "make_batch")?,
        labels: graphs.iter().map(|g| g.label.clone()).collect(),
    })
}

fn slice_rows(t: &Tensor, start: usize, end: usize) -> Tensor {
    let c = t.cols();
    Tensor::matrix(end - start, c, t.data()[start * c..end * c].to_vec())
        .expect("row slice of a matrix")
}

impl GraphBatch {
    pub fn num_edges(&self) -> usize {
        self.src.len()
    }

    pub fn node_count(&self, graph: usize) -> usize {
        self.node_offsets[graph + 1] - self.node_offsets[graph]
    }

    /// `1 / in-degree` per node as an `[n, 1]` column, 0 for isolated nodes.
    pub fn inverse_in_degree(&self) -> Tensor {
        let mut deg = vec![0usize; self.num_nodes];
        for &v in self.dst.iter() {
            deg[v] += 1;
        }
        let data = deg
            .into_iter()
            .map(|d| if d == 0 { 0.0 } else { 1.0 / d as f64 })
            .collect();
        Tensor::matrix(self.num_nodes, 1, data).expect("column")
    }

    /// Recovers graph `i` exactly as it was batched.
    pub fn unbatch(&self, i: usize) -> Graph {
        let (n0, n1) = (self.node_offsets[i], self.node_offsets[i + 1]);
        let (e0, e1) = (self.edge_offsets[i], self.edge_offsets[i + 1]);
        Graph {
            num_nodes: n1 - n0,
            edges: (e0..e1).map(|e| (self.src[e] - n0, self.dst[e] - n0)).collect(),
            node_attrs: self.node_attrs.as_ref().map(|x| slice_rows(x, n0, n1)),
            edge_attrs: self.edge_attrs.as_ref().map(|x| slice_rows(x, e0, e1)),
            label: self.labels[i].clone(),
        }
    }
}
