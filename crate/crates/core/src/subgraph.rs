//! Subgraph-Agg stage: soft node-membership masks and the reconstructed
//! graph embedding `h̃(G)`.
//!
//! A split operator turns node rows into a two-column probability matrix
//! `P = softmax(X_G·W)`. Tree-split applies a binary tree of such operators and
//! multiplies the chosen columns along each root-to-leaf path, so its `2^T`
//! masks partition unit mass. Multi-head applies `S` independent operators and
//! keeps the first column of each.

use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, ParameterStore, Tape, Tensor, Var};
use crate::encoder::ChannelKernel;
use crate::error::{Error, Result};
use crate::graph::GraphBatch;

/// `P = softmax_rows(X·W)` with `W: [d, 2]`.
#[derive(Clone, Debug)]
pub struct SplitOperator {
    pub weight: ParamId,
}

impl SplitOperator {
    pub fn new<R: Rng>(store: &mut ParameterStore, name: &str, dim: usize, rng: &mut R) -> Result<Self> {
        let bound = 1.0 / (dim.max(1) as f64).sqrt();
        let weight = store.add(format!("{name}.weight"), Tensor::uniform(&[dim, 2], bound, rng))?;
        Ok(Self { weight })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParameterStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        basic_operator(tape, x, w)
    }
}

pub fn basic_operator(tape: &mut Tape, x: Var, w: Var) -> Result<Var> {
    let logits = tape.matmul(x, w)?;
    tape.softmax_rows(logits)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum GeneratorKind {
    /// Binary tree of depth `depth`, giving `2^depth` subgraphs.
    TreeSplit { depth: usize },
    /// `heads` independent split operators.
    MultiHead { heads: usize },
}

impl Default for GeneratorKind {
    fn default() -> Self {
        GeneratorKind::TreeSplit { depth: 2 }
    }
}

impl GeneratorKind {
    pub fn num_subgraphs(self) -> usize {
        match self {
            GeneratorKind::TreeSplit { depth } => 1usize << depth,
            GeneratorKind::MultiHead { heads } => heads,
        }
    }

    pub fn num_operators(self) -> usize {
        match self {
            GeneratorKind::TreeSplit { depth } => (1usize << depth) - 1,
            GeneratorKind::MultiHead { heads } => heads,
        }
    }

    pub fn validate(self) -> Result<()> {
        match self {
            GeneratorKind::TreeSplit { depth } if !(1..=10).contains(&depth) => {
                Err(Error::config(format!("tree-split depth must be in 1..=10, got {depth}")))
            }
            GeneratorKind::MultiHead { heads: 0 } => {
                Err(Error::config("multi-head generator needs at least one head"))
            }
            _ => Ok(()),
        }
    }
}

/// Kind names accepted in config files and on the command line.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GeneratorName {
    TreeSplit,
    MultiHead,
}

impl FromStr for GeneratorName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tree-split" | "tree" => Ok(GeneratorName::TreeSplit),
            "multi-head" | "multihead" => Ok(GeneratorName::MultiHead),
            other => Err(Error::config(format!("unknown generator `{other}`"))),
        }
    }
}

/// Soft masks as `[|V|, 1]` columns, one per subgraph.
#[derive(Clone, Debug)]
pub struct Masks {
    pub soft: Vec<Var>,
}

#[derive(Clone, Debug)]
pub struct SubgraphGenerator {
    pub kind: GeneratorKind,
    /// Tree-split: heap order (root first, children of `i` at `2i+1`, `2i+2`).
    pub operators: Vec<SplitOperator>,
    pub conv: ChannelKernel,
}

impl SubgraphGenerator {
    pub fn new<R: Rng>(
        kind: GeneratorKind,
        dim: usize,
        store: &mut ParameterStore,
        rng: &mut R,
    ) -> Result<Self> {
        kind.validate()?;
        let operators = (0..kind.num_operators())
            .map(|i| SplitOperator::new(store, &format!("generator.split.{i}"), dim, rng))
            .collect::<Result<_>>()?;
        let conv = ChannelKernel::new(store, "generator.subgraph_conv", kind.num_subgraphs())?;
        Ok(Self {
            kind,
            operators,
            conv,
        })
    }

    pub fn num_subgraphs(&self) -> usize {
        self.kind.num_subgraphs()
    }

    pub fn masks(&self, tape: &mut Tape, store: &ParameterStore, x: Var) -> Result<Masks> {
        let soft = match self.kind {
            GeneratorKind::TreeSplit { depth } => tree_split(tape, store, x, &self.operators, depth)?,
            GeneratorKind::MultiHead { .. } => multi_head(tape, store, x, &self.operators)?,
        };
        Ok(Masks { soft })
    }

    /// `h(𝒢ᵢ)` for every subgraph, each `[num_graphs, d]`.
    pub fn subgraph_embeddings(
        &self,
        tape: &mut Tape,
        store: &ParameterStore,
        x: Var,
        batch: &GraphBatch,
    ) -> Result<Vec<Var>> {
        let masks = self.masks(tape, store, x)?;
        masks
            .soft
            .iter()
            .map(|&m| subgraph_readout(tape, x, m, batch))
            .collect()
    }

    /// `h̃(G)`, one row per batch graph.
    pub fn reconstruct(
        &self,
        tape: &mut Tape,
        store: &ParameterStore,
        x: Var,
        batch: &GraphBatch,
    ) -> Result<Var> {
        let parts = self.subgraph_embeddings(tape, store, x, batch)?;
        self.conv.forward(tape, store, &parts)
    }
}

/// Leaf masks of a depth-`depth` split tree, ordered left to right.
pub fn tree_split(
    tape: &mut Tape,
    store: &ParameterStore,
    x: Var,
    operators: &[SplitOperator],
    depth: usize,
) -> Result<Vec<Var>> {
    if depth == 0 || operators.len() != (1usize << depth) - 1 {
        return Err(Error::contract(format!(
            "tree of depth {depth} needs {} operators, got {}",
            (1usize << depth).saturating_sub(1),
            operators.len()
        )));
    }
    let mut level: Vec<Option<Var>> = vec![None];
    let mut first = 0;
    for _ in 0..depth {
        let mut next = Vec::with_capacity(level.len() * 2);
        for (offset, parent) in level.iter().enumerate() {
            let p = operators[first + offset].forward(tape, store, x)?;
            for side in 0..2 {
                let col = tape.column(p, side)?;
                let child = match parent {
                    Some(parent) => tape.mul(*parent, col)?,
                    None => col,
                };
                next.push(Some(child));
            }
        }
        first += level.len();
        level = next;
    }
    Ok(level.into_iter().map(|m| m.expect("set at every level")).collect())
}

/// Soft masks `P^i[:, 0]`, one per head.
pub fn multi_head(
    tape: &mut Tape,
    store: &ParameterStore,
    x: Var,
    operators: &[SplitOperator],
) -> Result<Vec<Var>> {
    operators
        .iter()
        .map(|op| {
            let p = op.forward(tape, store, x)?;
            tape.column(p, 0)
        })
        .collect()
}

/// Thresholded membership: `1` where the soft weight is at least `0.5`.
pub fn hard_mask(soft: &Tensor) -> Tensor {
    soft.map(|p| if p >= 0.5 { 1.0 } else { 0.0 })
}

/// Per-graph sum of node rows weighted by an `[|V|, 1]` mask.
pub fn subgraph_readout(tape: &mut Tape, x: Var, mask: Var, batch: &GraphBatch) -> Result<Var> {
    let weighted = tape.mul(x, mask)?;
    tape.row_sum_segments(weighted, batch.graph_id.clone(), batch.num_graphs)
}
