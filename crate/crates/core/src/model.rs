//! Encoder, generator and optional prediction head sharing one parameter
//! store, plus checkpoint save/load.

use std::path::Path;

use crate::autodiff::{checkpoint, ParameterStore, Tape, Tensor};
use crate::encoder::{Encoder, EncoderConfig, Mlp, Readout};
use crate::error::{Error, Result};
use crate::graph::{degree_features, make_batch, Graph};
use crate::seed::{seeded, streams};
use crate::subgraph::{hard_mask, GeneratorKind, SubgraphGenerator};

/// What the prediction head is trained for.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    Classification { classes: usize },
    Regression { targets: usize },
}

impl Task {
    pub fn outputs(self) -> usize {
        match self {
            Task::Classification { classes } => classes,
            Task::Regression { targets } => targets,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub generator: GeneratorKind,
    pub task: Option<Task>,
    /// Set when node features are degree one-hots of this width minus one.
    pub max_degree: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParameterStore,
    pub encoder: Encoder,
    pub generator: SubgraphGenerator,
    /// `d → d → outputs` MLP on `h(G)`.
    pub head: Option<Mlp>,
}

/// Graphs per forward pass when embedding without gradients.
const EMBED_CHUNK: usize = 256;

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut rng = seeded(seed, streams::INIT);
        let mut store = ParameterStore::new();
        let encoder = Encoder::new(config.encoder.clone(), &mut store, &mut rng)?;
        let d = config.encoder.hidden;
        let generator = SubgraphGenerator::new(config.generator, d, &mut store, &mut rng)?;
        let head = match config.task {
            Some(task) => Some(Mlp::new(&mut store, "head", &[d, d, task.outputs()], &mut rng)?),
            None => None,
        };
        Ok(Self {
            config,
            store,
            encoder,
            generator,
            head,
        })
    }

    /// Copies of `graphs` with the features this model expects.
    ///
    /// Graphs without node attributes get degree one-hots when the model was
    /// built for them. Width mismatches are data errors.
    pub fn prepare(&self, graphs: &[Graph]) -> Result<Vec<Graph>> {
        let cfg = &self.config.encoder;
        graphs
            .iter()
            .enumerate()
            .map(|(i, g)| {
                let mut g = g.clone();
                if let Some(max_degree) = self.config.max_degree {
                    if g.node_attrs.is_none() {
                        g.node_attrs = Some(degree_features(&g, max_degree));
                    }
                }
                let width = g.node_attrs.as_ref().map(Tensor::cols);
                if width != Some(cfg.input_dim) {
                    return Err(Error::DataMismatch(format!(
                        "graph {i} has node feature width {width:?}, model expects {}",
                        cfg.input_dim
                    )));
                }
                match (cfg.edge_dim, g.edge_attrs.as_ref().map(Tensor::cols)) {
                    (None, _) => g.edge_attrs = None,
                    (Some(e), Some(w)) if e == w => {}
                    (Some(e), w) => {
                        return Err(Error::DataMismatch(format!(
                            "graph {i} has edge feature width {w:?}, model expects {e}"
                        )))
                    }
                }
                Ok(g)
            })
            .collect()
    }

    /// `h(G)` for each prepared graph, `[graphs.len(), d]`.
    pub fn embed(&self, graphs: &[Graph]) -> Result<Tensor> {
        let d = self.config.encoder.hidden;
        let mut data = Vec::with_capacity(graphs.len() * d);
        for chunk in graphs.chunks(EMBED_CHUNK) {
            let batch = make_batch(chunk)?;
            let mut tape = Tape::new();
            let out = self.encoder.encode(&mut tape, &self.store, &batch)?;
            data.extend_from_slice(tape.value(out.graphs).data());
        }
        Tensor::matrix(graphs.len(), d, data)
    }

    /// Head outputs for each prepared graph.
    pub fn predict(&self, graphs: &[Graph]) -> Result<Tensor> {
        let head = self
            .head
            .as_ref()
            .ok_or_else(|| Error::contract("model has no prediction head"))?;
        let out_dim = head.out_dim();
        let mut data = Vec::with_capacity(graphs.len() * out_dim);
        for chunk in graphs.chunks(EMBED_CHUNK) {
            let batch = make_batch(chunk)?;
            let mut tape = Tape::new();
            let out = self.encoder.encode(&mut tape, &self.store, &batch)?;
            let pred = head.forward(&mut tape, &self.store, out.graphs)?;
            data.extend_from_slice(tape.value(pred).data());
        }
        Tensor::matrix(graphs.len(), out_dim, data)
    }

    /// Soft masks of one prepared graph as `[num_nodes, S]`.
    pub fn masks(&self, graph: &Graph) -> Result<Tensor> {
        let batch = make_batch([graph])?;
        let mut tape = Tape::new();
        let out = self.encoder.encode(&mut tape, &self.store, &batch)?;
        let masks = self.generator.masks(&mut tape, &self.store, out.nodes)?;
        let s = masks.soft.len();
        let mut t = Tensor::zeros(&[graph.num_nodes, s]);
        for (j, m) in masks.soft.iter().enumerate() {
            for (v, &w) in tape.value(*m).data().iter().enumerate() {
                t.row_mut(v)[j] = w;
            }
        }
        Ok(t)
    }

    /// Thresholded version of [`Model::masks`].
    pub fn hard_masks(&self, graph: &Graph) -> Result<Tensor> {
        Ok(hard_mask(&self.masks(graph)?))
    }

    fn meta_records(&self) -> Vec<(String, Tensor)> {
        let c = &self.config;
        let (gen_kind, gen_size) = match c.generator {
            GeneratorKind::TreeSplit { depth } => (0.0, depth),
            GeneratorKind::MultiHead { heads } => (1.0, heads),
        };
        let (task_kind, task_out) = match c.task {
            None => (0.0, 0),
            Some(Task::Classification { classes }) => (1.0, classes),
            Some(Task::Regression { targets }) => (2.0, targets),
        };
        let readout = match c.encoder.readout {
            Readout::Sum => 0.0,
            Readout::Mean => 1.0,
        };
        let scalar = |name: &str, v: f64| (format!("meta.{name}"), Tensor::scalar(v));
        vec![
            scalar("input_dim", c.encoder.input_dim as f64),
            scalar("edge_dim", c.encoder.edge_dim.unwrap_or(0) as f64),
            scalar("hidden", c.encoder.hidden as f64),
            scalar("layers", c.encoder.layers as f64),
            scalar("readout", readout),
            scalar("generator_kind", gen_kind),
            scalar("generator_size", gen_size as f64),
            scalar("task_kind", task_kind),
            scalar("task_outputs", task_out as f64),
            scalar("max_degree", c.max_degree.map_or(-1.0, |m| m as f64)),
        ]
    }

    pub fn to_records(&self) -> Vec<(String, Tensor)> {
        let mut records = self.meta_records();
        records.extend(self.store.iter().map(|(_, p)| (p.name.clone(), p.value.clone())));
        records
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, &self.to_records())
    }

    pub fn from_records(records: &[(String, Tensor)]) -> Result<Self> {
        let meta = |name: &str| -> Result<f64> {
            let key = format!("meta.{name}");
            records
                .iter()
                .find(|(n, _)| *n == key)
                .filter(|(_, t)| t.len() == 1)
                .map(|(_, t)| t.data()[0])
                .ok_or_else(|| Error::Checkpoint(format!("missing record `{key}`")))
        };
        let count = |name: &str| -> Result<usize> {
            let v = meta(name)?;
            if v < 0.0 || v.fract() != 0.0 {
                return Err(Error::Checkpoint(format!("bad value {v} for meta.{name}")));
            }
            Ok(v as usize)
        };
        let edge_dim = count("edge_dim")?;
        let readout = match count("readout")? {
            0 => Readout::Sum,
            1 => Readout::Mean,
            k => return Err(Error::Checkpoint(format!("unknown readout code {k}"))),
        };
        let size = count("generator_size")?;
        let generator = match count("generator_kind")? {
            0 => GeneratorKind::TreeSplit { depth: size },
            1 => GeneratorKind::MultiHead { heads: size },
            k => return Err(Error::Checkpoint(format!("unknown generator code {k}"))),
        };
        let outputs = count("task_outputs")?;
        let task = match count("task_kind")? {
            0 => None,
            1 => Some(Task::Classification { classes: outputs }),
            2 => Some(Task::Regression { targets: outputs }),
            k => return Err(Error::Checkpoint(format!("unknown task code {k}"))),
        };
        let max_degree = match meta("max_degree")? {
            v if v < 0.0 => None,
            _ => Some(count("max_degree")?),
        };
        let config = ModelConfig {
            encoder: EncoderConfig {
                input_dim: count("input_dim")?,
                edge_dim: (edge_dim > 0).then_some(edge_dim),
                hidden: count("hidden")?,
                layers: count("layers")?,
                readout,
            },
            generator,
            task,
            max_degree,
        };
        let mut model = Model::new(config, 0).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let params = records.iter().filter(|(n, _)| !n.starts_with("meta."));
        let mut seen = 0;
        for (name, value) in params {
            let id = model
                .store
                .id(name)
                .ok_or_else(|| Error::Checkpoint(format!("unexpected parameter `{name}`")))?;
            let slot = model.store.value_mut(id);
            if slot.shape() != value.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter `{name}` has shape {:?}, expected {:?}",
                    value.shape(),
                    slot.shape()
                )));
            }
            *slot = value.clone();
            seen += 1;
        }
        if seen != model.store.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {seen} of {} parameters",
                model.store.len()
            )));
        }
        Ok(model)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_records(&checkpoint::load(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::synthetic_dataset;

    fn config() -> ModelConfig {
        ModelConfig {
            encoder: EncoderConfig {
                input_dim: 5,
                edge_dim: None,
                hidden: 8,
                layers: 2,
                readout: Readout::Sum,
            },
            generator: GeneratorKind::TreeSplit { depth: 2 },
            task: Some(Task::Classification { classes: 2 }),
            max_degree: Some(4),
        }
    }

    #[test]
    fn records_round_trip() {
        let model = Model::new(config(), 3).unwrap();
        let back = Model::from_records(&model.to_records()).unwrap();
        assert_eq!(back.config, model.config);
        for ((_, a), (_, b)) in model.store.iter().zip(back.store.iter()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.value, b.value);
        }
    }

    #[test]
    fn missing_parameter_rejected() {
        let model = Model::new(config(), 3).unwrap();
        let mut records = model.to_records();
        records.pop();
        assert!(matches!(Model::from_records(&records), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn prepare_adds_degree_features_and_checks_width() {
        let model = Model::new(config(), 1).unwrap();
        let graphs = synthetic_dataset(1, 4, 2);
        let prepared = model.prepare(&graphs).unwrap();
        assert!(prepared.iter().all(|g| g.node_attrs.as_ref().unwrap().cols() == 5));
        let mut other = config();
        other.max_degree = None;
        let model = Model::new(other, 1).unwrap();
        assert!(matches!(model.prepare(&graphs), Err(Error::DataMismatch(_))));
    }

    #[test]
    fn masks_have_one_column_per_subgraph() {
        let model = Model::new(config(), 1).unwrap();
        let graphs = model.prepare(&synthetic_dataset(2, 1, 2)).unwrap();
        let m = model.masks(&graphs[0]).unwrap();
        assert_eq!(m.shape(), &[graphs[0].num_nodes, 4]);
        for v in 0..m.rows() {
            assert!((m.row(v).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
