//! Reader and writer for the TUDataset plain-text format.
//!
//! A dataset `DS` lives in one directory as a set of line-oriented files:
//! `DS_A.txt` (1-indexed `u, v` pairs), `DS_graph_indicator.txt` (graph id
//! per node), `DS_graph_labels.txt` (one label per graph), and optionally
//! `DS_node_labels.txt`, `DS_node_attributes.txt`, `DS_edge_labels.txt`,
//! `DS_edge_attributes.txt`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::graph::{symmetrize, Dataset, Graph, Label};

struct Lines {
    path: PathBuf,
    /// (1-based line number, trimmed content), blank lines skipped.
    rows: Vec<(usize, String)>,
}

impl Lines {
    fn read(path: PathBuf) -> Result<Self> {
        let text = fs::read_to_string(&path).map_err(|e| Error::Load {
            path: path.clone(),
            reason: e.to_string(),
        })?;
        let rows = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim().to_string()))
            .filter(|(_, l)| !l.is_empty())
            .collect();
        Ok(Self { path, rows })
    }

    fn read_optional(path: PathBuf) -> Result<Option<Self>> {
        if path.exists() {
            Self::read(path).map(Some)
        } else {
            Ok(None)
        }
    }

    fn integrity(&self, line: usize, reason: impl Into<String>) -> Error {
        Error::Integrity {
            path: self.path.clone(),
            line,
            reason: reason.into(),
        }
    }

    fn expect_len(&self, n: usize, what: &str) -> Result<()> {
        if self.rows.len() != n {
            let line = self.rows.last().map_or(0, |r| r.0);
            return Err(self.integrity(
                line,
                format!("expected {n} rows ({what}), found {}", self.rows.len()),
            ));
        }
        Ok(())
    }

    fn ints(&self) -> Result<Vec<i64>> {
        self.rows
            .iter()
            .map(|(line, s)| {
                s.parse::<i64>()
                    .map_err(|_| self.integrity(*line, format!("expected an integer, got `{s}`")))
            })
            .collect()
    }

    fn float_rows(&self) -> Result<Tensor> {
        let mut rows = Vec::with_capacity(self.rows.len());
        for (line, s) in &self.rows {
            let row = s
                .split(',')
                .map(|f| f.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| self.integrity(*line, format!("expected numbers, got `{s}`")))?;
            if let Some(first) = rows.first().map(Vec::len) {
                if first != row.len() {
                    return Err(self.integrity(*line, "inconsistent attribute width"));
                }
            }
            rows.push(row);
        }
        Tensor::from_rows(&rows)
    }
}

/// Maps categorical values onto one-hot rows over the sorted distinct values.
fn one_hot(values: &[i64]) -> Tensor {
    let mut index = BTreeMap::new();
    for &v in values {
        index.entry(v).or_insert(0usize);
    }
    for (i, slot) in index.values_mut().enumerate() {
        *slot = i;
    }
    let width = index.len();
    let mut t = Tensor::zeros(&[values.len(), width]);
    for (r, v) in values.iter().enumerate() {
        t.row_mut(r)[index[v]] = 1.0;
    }
    t
}

fn hconcat(parts: Vec<Tensor>) -> Option<Tensor> {
    let rows = parts.first()?.rows();
    let width: usize = parts.iter().map(Tensor::cols).sum();
    let mut data = Vec::with_capacity(rows * width);
    for r in 0..rows {
        for p in &parts {
            data.extend_from_slice(p.row(r));
        }
    }
    Some(Tensor::matrix(rows, width, data).expect("equal row counts"))
}

fn file(dir: &Path, name: &str, suffix: &str) -> PathBuf {
    dir.join(format!("{name}_{suffix}.txt"))
}

/// Loads dataset `name` from `dir`, re-indexing nodes per graph from 0 and
/// remapping class labels to `0..num_classes`.
pub fn load_tudataset(dir: &Path, name: &str) -> Result<Dataset> {
    let adjacency = Lines::read(file(dir, name, "A"))?;
    let indicator = Lines::read(file(dir, name, "graph_indicator"))?;
    let graph_labels = Lines::read(file(dir, name, "graph_labels"))?;

    let node_graph = indicator.ints()?;
    let num_nodes = node_graph.len();
    // label line k belongs to the k-th smallest graph id
    let mut graph_index: BTreeMap<i64, usize> = node_graph.iter().map(|&g| (g, 0)).collect();
    for (i, slot) in graph_index.values_mut().enumerate() {
        *slot = i;
    }
    let num_graphs = graph_index.len();
    graph_labels.expect_len(num_graphs, "one label per graph")?;

    let mut local = vec![0usize; num_nodes];
    let mut counts = vec![0usize; num_graphs];
    let node_owner: Vec<usize> = node_graph.iter().map(|g| graph_index[g]).collect();
    for (v, &g) in node_owner.iter().enumerate() {
        local[v] = counts[g];
        counts[g] += 1;
    }

    let node_parts: Vec<Tensor> = [
        Lines::read_optional(file(dir, name, "node_attributes"))?
            .map(|l| {
                l.expect_len(num_nodes, "one row per node")?;
                l.float_rows()
            })
            .transpose()?,
        Lines::read_optional(file(dir, name, "node_labels"))?
            .map(|l| {
                l.expect_len(num_nodes, "one label per node")?;
                l.ints().map(|v| one_hot(&v))
            })
            .transpose()?,
    ]
    .into_iter()
    .flatten()
    .collect();
    let node_attrs = hconcat(node_parts);

    let mut edges_per_graph: Vec<Vec<((usize, usize), usize)>> = vec![Vec::new(); num_graphs];
    for (k, (line, s)) in adjacency.rows.iter().enumerate() {
        let mut it = s.split(',').map(|f| f.trim().parse::<usize>());
        let (u, v) = match (it.next(), it.next(), it.next()) {
            (Some(Ok(u)), Some(Ok(v)), None) => (u, v),
            _ => return Err(adjacency.integrity(*line, format!("expected `u, v`, got `{s}`"))),
        };
        for node in [u, v] {
            if node == 0 || node > num_nodes {
                return Err(adjacency.integrity(
                    *line,
                    format!("dangling node reference {node} (dataset has {num_nodes} nodes)"),
                ));
            }
        }
        let (gu, gv) = (node_owner[u - 1], node_owner[v - 1]);
        if gu != gv {
            return Err(adjacency.integrity(*line, format!("edge ({u}, {v}) crosses graphs")));
        }
        edges_per_graph[gu].push(((local[u - 1], local[v - 1]), k));
    }

    let num_edges = adjacency.rows.len();
    let edge_parts: Vec<Tensor> = [
        Lines::read_optional(file(dir, name, "edge_attributes"))?
            .map(|l| {
                l.expect_len(num_edges, "one row per edge")?;
                l.float_rows()
            })
            .transpose()?,
        Lines::read_optional(file(dir, name, "edge_labels"))?
            .map(|l| {
                l.expect_len(num_edges, "one label per edge")?;
                l.ints().map(|v| one_hot(&v))
            })
            .transpose()?,
    ]
    .into_iter()
    .flatten()
    .collect();
    let edge_attrs = hconcat(edge_parts);

    let raw_labels = graph_labels.ints()?;
    let mut class_of: BTreeMap<i64, usize> = raw_labels.iter().map(|&l| (l, 0)).collect();
    for (i, slot) in class_of.values_mut().enumerate() {
        *slot = i;
    }

    // nodes of a graph need not be contiguous in the file
    let mut node_rows: Vec<Vec<usize>> = vec![Vec::new(); num_graphs];
    for (v, &g) in node_owner.iter().enumerate() {
        node_rows[g].push(v);
    }

    let mut graphs = Vec::with_capacity(num_graphs);
    for g in 0..num_graphs {
        let pairs: Vec<(usize, usize)> = edges_per_graph[g].iter().map(|&(e, _)| e).collect();
        let attrs = edge_attrs.as_ref().map(|x| {
            let c = x.cols();
            let mut data = Vec::with_capacity(pairs.len() * c);
            for &(_, k) in &edges_per_graph[g] {
                data.extend_from_slice(x.row(k));
            }
            Tensor::matrix(pairs.len(), c, data).expect("edge rows")
        });
        let (edges, attrs) = symmetrize(&pairs, attrs.as_ref())?;
        let nodes = node_attrs.as_ref().map(|x| {
            let c = x.cols();
            let mut data = Vec::with_capacity(counts[g] * c);
            for &v in &node_rows[g] {
                data.extend_from_slice(x.row(v));
            }
            Tensor::matrix(counts[g], c, data).expect("node rows")
        });
        let label = Label::Class(class_of[&raw_labels[g]]);
        graphs.push(Graph::new(counts[g], edges, nodes, attrs, Some(label))?);
    }
    Ok(Dataset::new(name, graphs))
}

fn join_row(row: &[f64]) -> String {
    let mut s = String::new();
    for (i, v) in row.iter().enumerate() {
        if i > 0 {
            s.push_str(", ");
        }
        write!(s, "{v:?}").expect("write to string");
    }
    s
}

/// Writes graphs as TUDataset files; attributes go to the continuous
/// `*_attributes.txt` files so values survive a reload unchanged.
pub fn write_tudataset(dir: &Path, name: &str, graphs: &[Graph]) -> Result<()> {
    let mut a = String::new();
    let mut indicator = String::new();
    let mut labels = String::new();
    let mut node_attrs = String::new();
    let mut edge_attrs = String::new();
    let with_nodes = graphs.iter().any(|g| g.node_attrs.is_some());
    let with_edges = graphs.iter().any(|g| g.edge_attrs.is_some());
    if (with_nodes && graphs.iter().any(|g| g.node_attrs.is_none()))
        || (with_edges && graphs.iter().any(|g| g.edge_attrs.is_none()))
    {
        return Err(Error::contract("attributes must be present on all graphs or none"));
    }
    let mut offset = 0;
    for (gi, g) in graphs.iter().enumerate() {
        let class = match &g.label {
            Some(Label::Class(c)) => *c,
            _ => return Err(Error::contract(format!("graph {gi} has no class label"))),
        };
        writeln!(labels, "{class}").expect("write");
        for v in 0..g.num_nodes {
            writeln!(indicator, "{}", gi + 1).expect("write");
            if let Some(x) = &g.node_attrs {
                writeln!(node_attrs, "{}", join_row(x.row(v))).expect("write");
            }
        }
        for (k, &(u, v)) in g.edges.iter().enumerate() {
            writeln!(a, "{}, {}", u + offset + 1, v + offset + 1).expect("write");
            if let Some(x) = &g.edge_attrs {
                writeln!(edge_attrs, "{}", join_row(x.row(k))).expect("write");
            }
        }
        offset += g.num_nodes;
    }
    fs::create_dir_all(dir)?;
    fs::write(file(dir, name, "A"), a)?;
    fs::write(file(dir, name, "graph_indicator"), indicator)?;
    fs::write(file(dir, name, "graph_labels"), labels)?;
    if with_nodes {
        fs::write(file(dir, name, "node_attributes"), node_attrs)?;
    }
    if with_edges {
        fs::write(file(dir, name, "edge_attributes"), edge_attrs)?;
    }
    Ok(())
}
