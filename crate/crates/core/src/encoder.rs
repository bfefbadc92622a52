//! Node-Agg and Layer-Agg stages.
//!
//! Node attributes go through `MLP_V`. Edge attributes go through `MLP_E`
//! and are averaged onto their incident nodes, and the two views are fused by
//! [`AttributeConv`]. The result `X⁽⁰⁾` passes through `L` GIN-0 layers, whose
//! outputs `X⁽¹⁾…X⁽ᴸ⁾` are fused by [`LayerConv`] into `X_G`. A sum readout
//! then gives one vector `h(G)` per graph.

use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, ParameterStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::graph::GraphBatch;

/// Affine map `x·W + b` with `W: [in, out]`, `b: [1, out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    /// Weights and bias drawn from `uniform(-1/√in, 1/√in)`.
    pub fn new<R: Rng>(
        store: &mut ParameterStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let bound = 1.0 / (in_dim.max(1) as f64).sqrt();
        let weight = store.add(
            format!("{name}.weight"),
            Tensor::uniform(&[in_dim, out_dim], bound, rng),
        )?;
        let bias = store.add(
            format!("{name}.bias"),
            Tensor::uniform(&[1, out_dim], bound, rng),
        )?;
        Ok(Self {
            weight,
            bias,
            in_dim,
            out_dim,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParameterStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        let xw = tape.matmul(x, w)?;
        tape.add(xw, b)
    }
}

/// Linear layers with ReLU between consecutive layers (none after the last).
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    pub fn new<R: Rng>(
        store: &mut ParameterStore,
        name: &str,
        widths: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::contract("an MLP needs at least input and output widths"));
        }
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.{i}"), w[0], w[1], rng))
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().expect("non-empty").out_dim
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParameterStore, x: Var) -> Result<Var> {
        let width = tape.value(x).cols();
        if width != self.in_dim() {
            return Err(Error::contract(format!(
                "MLP expects input width {}, got {width}",
                self.in_dim()
            )));
        }
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            if i > 0 {
                h = tape.relu(h);
            }
            h = layer.forward(tape, store, h)?;
        }
        Ok(h)
    }
}

/// A learnable `(k, 1)` kernel: `Σᵢ wᵢ·Xᵢ + b` over `k` equally shaped inputs.
#[derive(Clone, Debug)]
pub struct ChannelKernel {
    pub weights: ParamId,
    pub bias: ParamId,
    pub channels: usize,
}

impl ChannelKernel {
    /// Starts at plain averaging: `wᵢ = 1/k`, `b = 0`.
    pub fn new(store: &mut ParameterStore, name: &str, channels: usize) -> Result<Self> {
        let weights = store.add(
            format!("{name}.weights"),
            Tensor::full(&[channels], 1.0 / channels as f64),
        )?;
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[1]))?;
        Ok(Self {
            weights,
            bias,
            channels,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParameterStore, inputs: &[Var]) -> Result<Var> {
        if inputs.len() != self.channels {
            return Err(Error::Shape {
                op: "channel kernel",
                lhs: vec![self.channels],
                rhs: vec![inputs.len()],
            });
        }
        let w = tape.param(store, self.weights);
        let b = tape.param(store, self.bias);
        tape.combine(inputs, w, b)
    }
}

/// Fuses the node view and the aggregated edge view into `X⁽⁰⁾`.
pub type AttributeConv = ChannelKernel;
/// Fuses the `L` GIN layer outputs into `X_G`.
pub type LayerConv = ChannelKernel;

/// One GIN layer: `X' = MLP((1 + ε)·X + Σ_{u→v} X_u)`.
#[derive(Clone, Debug)]
pub struct GinLayer {
    pub mlp: Mlp,
    pub epsilon: f64,
}

impl GinLayer {
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParameterStore,
        x: Var,
        batch: &GraphBatch,
    ) -> Result<Var> {
        gin_forward(tape, store, x, batch, self)
    }
}

pub fn gin_forward(
    tape: &mut Tape,
    store: &ParameterStore,
    x: Var,
    batch: &GraphBatch,
    layer: &GinLayer,
) -> Result<Var> {
    let rows = tape.value(x).rows();
    if rows != batch.num_nodes {
        return Err(Error::Shape {
            op: "gin_forward",
            lhs: vec![batch.num_nodes],
            rhs: tape.value(x).shape().to_vec(),
        });
    }
    let messages = tape.gather_rows(x, batch.src.clone())?;
    let neighbours = tape.scatter_add_rows(messages, batch.dst.clone(), batch.num_nodes)?;
    let own = if layer.epsilon == 0.0 {
        x
    } else {
        tape.scale(x, 1.0 + layer.epsilon)
    };
    let combined = tape.add(own, neighbours)?;
    layer.mlp.forward(tape, store, combined)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Readout {
    #[default]
    Sum,
    Mean,
}

impl FromStr for Readout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(Readout::Sum),
            "mean" => Ok(Readout::Mean),
            other => Err(Error::config(format!("unknown readout `{other}`"))),
        }
    }
}

/// Per-graph reduction of node rows.
pub fn readout(tape: &mut Tape, x: Var, batch: &GraphBatch, kind: Readout) -> Result<Var> {
    let summed = tape.row_sum_segments(x, batch.graph_id.clone(), batch.num_graphs)?;
    match kind {
        Readout::Sum => Ok(summed),
        Readout::Mean => {
            let inv: Vec<f64> = (0..batch.num_graphs)
                .map(|g| 1.0 / batch.node_count(g).max(1) as f64)
                .collect();
            let inv = tape.constant(Tensor::matrix(batch.num_graphs, 1, inv)?);
            tape.mul(summed, inv)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Width of the raw node attributes.
    pub input_dim: usize,
    /// Width of the raw edge attributes, if the data has any.
    pub edge_dim: Option<usize>,
    pub hidden: usize,
    pub layers: usize,
    pub readout: Readout,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.hidden == 0 || self.input_dim == 0 {
            return Err(Error::config("encoder layers, hidden and input widths must be >= 1"));
        }
        if self.edge_dim == Some(0) {
            return Err(Error::config("edge attribute width must be >= 1"));
        }
        Ok(())
    }
}

/// Outputs of one encoder pass, all recorded on the caller's tape.
#[derive(Clone, Copy, Debug)]
pub struct EncoderOutput {
    /// `X⁽⁰⁾`, the GIN input.
    pub initial: Var,
    /// `X_G`, one row per batch node.
    pub nodes: Var,
    /// `h(G)`, one row per batch graph.
    pub graphs: Var,
}

#[derive(Clone, Debug)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub node_mlp: Mlp,
    pub edge_mlp: Option<Mlp>,
    pub attribute_conv: Option<AttributeConv>,
    pub gin: Vec<GinLayer>,
    pub layer_conv: LayerConv,
}

impl Encoder {
    pub fn new<R: Rng>(config: EncoderConfig, store: &mut ParameterStore, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let d = config.hidden;
        let node_mlp = Mlp::new(store, "encoder.node_mlp", &[config.input_dim, d, d], rng)?;
        let (edge_mlp, attribute_conv) = match config.edge_dim {
            Some(e) => (
                Some(Mlp::new(store, "encoder.edge_mlp", &[e, d, d], rng)?),
                Some(ChannelKernel::new(store, "encoder.attribute_conv", 2)?),
            ),
            None => (None, None),
        };
        let gin = (0..config.layers)
            .map(|k| {
                Ok(GinLayer {
                    mlp: Mlp::new(store, &format!("encoder.gin.{k}"), &[d, d, d], rng)?,
                    epsilon: 0.0,
                })
            })
            .collect::<Result<_>>()?;
        let layer_conv = ChannelKernel::new(store, "encoder.layer_conv", config.layers)?;
        Ok(Self {
            config,
            node_mlp,
            edge_mlp,
            attribute_conv,
            gin,
            layer_conv,
        })
    }

    /// `X_V⁽⁰⁾` and, when edge attributes are modelled, `X_E⁽⁰⁾`.
    pub fn embed_attributes(
        &self,
        tape: &mut Tape,
        store: &ParameterStore,
        batch: &GraphBatch,
    ) -> Result<(Var, Option<Var>)> {
        let x = batch
            .node_attrs
            .as_ref()
            .ok_or_else(|| Error::contract("batch has no node attributes"))?;
        let x = tape.constant(x.clone());
        let nodes = self.node_mlp.forward(tape, store, x)?;
        let Some(edge_mlp) = &self.edge_mlp else {
            return Ok((nodes, None));
        };
        let e = batch
            .edge_attrs
            .as_ref()
            .ok_or_else(|| Error::contract("encoder expects edge attributes"))?;
        let e = tape.constant(e.clone());
        let per_edge = edge_mlp.forward(tape, store, e)?;
        let summed = tape.scatter_add_rows(per_edge, batch.dst.clone(), batch.num_nodes)?;
        let inv = tape.constant(batch.inverse_in_degree());
        let edges = tape.mul(summed, inv)?;
        Ok((nodes, Some(edges)))
    }

    /// `X⁽⁰⁾`: the attribute-conv fusion, or `X_V⁽⁰⁾` alone without edge data.
    pub fn initial_embeddings(
        &self,
        tape: &mut Tape,
        store: &ParameterStore,
        batch: &GraphBatch,
    ) -> Result<Var> {
        let (nodes, edges) = self.embed_attributes(tape, store, batch)?;
        match (edges, &self.attribute_conv) {
            (Some(edges), Some(conv)) => conv.forward(tape, store, &[nodes, edges]),
            _ => Ok(nodes),
        }
    }

    /// GIN layers, layer-conv and readout applied to a given `X⁽⁰⁾`.
    pub fn propagate(
        &self,
        tape: &mut Tape,
        store: &ParameterStore,
        initial: Var,
        batch: &GraphBatch,
    ) -> Result<(Var, Var)> {
        let mut x = initial;
        let mut outputs = Vec::with_capacity(self.gin.len());
        for layer in &self.gin {
            x = layer.forward(tape, store, x, batch)?;
            outputs.push(x);
        }
        let nodes = self.layer_conv.forward(tape, store, &outputs)?;
        let graphs = readout(tape, nodes, batch, self.config.readout)?;
        Ok((nodes, graphs))
    }

    pub fn encode(
        &self,
        tape: &mut Tape,
        store: &ParameterStore,
        batch: &GraphBatch,
    ) -> Result<EncoderOutput> {
        let initial = self.initial_embeddings(tape, store, batch)?;
        let (nodes, graphs) = self.propagate(tape, store, initial, batch)?;
        Ok(EncoderOutput {
            initial,
            nodes,
            graphs,
        })
    }
}
