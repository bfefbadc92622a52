//! Run configuration files.
//!
//! A run is described by one TOML file with the sections `[data]`,
//! `[encoder]`, `[generator]`, `[objective]`, `[train]` and `[eval]`. Every
//! key is optional and falls back to the defaults below; unknown keys are
//! rejected. [`RunConfig::snapshot`] writes the fully expanded form back out.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::encoder::{EncoderConfig, Readout};
use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::graph::{max_degree, Dataset, Label};
use crate::model::{ModelConfig, Task};
use crate::objective::Estimator;
use crate::subgraph::GeneratorKind;
use crate::synthetic::{synthetic_dataset, synthetic_regression};
use crate::train::TrainConfig;
use crate::tudataset::load_tudataset;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataSource {
    /// `{dir}/{name}_A.txt` and friends.
    #[default]
    Tudataset,
    /// Planted-motif classification graphs.
    Synthetic,
    /// Planted-clique graphs with a scalar regression target.
    SyntheticRegression,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub source: DataSource,
    /// Directory holding the dataset files.
    pub dir: PathBuf,
    pub name: String,
    /// Feed edge attributes to the encoder when the data has them.
    pub edge_features: bool,
    /// Degree cap for one-hot degree features on graphs without node
    /// attributes; the dataset maximum when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_degree: Option<usize>,
    /// Synthetic sources only.
    pub graphs: usize,
    pub classes: usize,
    pub synth_seed: u64,
    /// Semi-supervised split fractions; the rest is unlabeled.
    pub labeled_fraction: f64,
    pub validation_fraction: f64,
    pub test_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Tudataset,
            dir: PathBuf::from("data/MUTAG"),
            name: "MUTAG".into(),
            edge_features: true,
            max_degree: None,
            graphs: 200,
            classes: 2,
            synth_seed: 0,
            labeled_fraction: 0.1,
            validation_fraction: 0.1,
            test_fraction: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderSection {
    pub hidden: usize,
    pub layers: usize,
    pub readout: Readout,
}

impl Default for EncoderSection {
    fn default() -> Self {
        Self {
            hidden: 128,
            layers: 4,
            readout: Readout::Sum,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GeneratorChoice {
    #[default]
    TreeSplit,
    MultiHead,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorSection {
    pub kind: GeneratorChoice,
    /// Tree-split depth `T`, giving `2^T` subgraphs.
    pub depth: usize,
    /// Multi-head subgraph count `S`.
    pub heads: usize,
}

impl Default for GeneratorSection {
    fn default() -> Self {
        Self {
            kind: GeneratorChoice::TreeSplit,
            depth: 2,
            heads: 4,
        }
    }
}

impl GeneratorSection {
    pub fn kind(&self) -> GeneratorKind {
        match self.kind {
            GeneratorChoice::TreeSplit => GeneratorKind::TreeSplit { depth: self.depth },
            GeneratorChoice::MultiHead => GeneratorKind::MultiHead { heads: self.heads },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObjectiveSection {
    pub estimator: Estimator,
    /// Weight of the unsupervised term in semi-supervised runs.
    pub lambda: f64,
}

impl Default for ObjectiveSection {
    fn default() -> Self {
        Self {
            estimator: Estimator::Jsd,
            lambda: 1e-3,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataConfig,
    pub encoder: EncoderSection,
    pub generator: GeneratorSection,
    pub objective: ObjectiveSection,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    /// Parses and validates.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads, parses and validates; an unreadable file is a config error.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.encoder.hidden == 0 || self.encoder.layers == 0 {
            return Err(Error::config("encoder.hidden and encoder.layers must be >= 1"));
        }
        let kind = self.generator.kind();
        kind.validate()?;
        let s = kind.num_subgraphs();
        if ![2, 4, 8].contains(&s) {
            log::warn!("{s} subgraphs configured; the usual choices are 2, 4 or 8");
        }
        if !(self.objective.lambda >= 0.0 && self.objective.lambda.is_finite()) {
            return Err(Error::config("objective.lambda must be finite and >= 0"));
        }
        self.train.validate()?;
        self.eval.validate()?;
        let d = &self.data;
        let fractions = [d.labeled_fraction, d.validation_fraction, d.test_fraction];
        if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || fractions.iter().sum::<f64>() > 1.0 {
            return Err(Error::config("data split fractions must lie in [0, 1] and sum to at most 1"));
        }
        match d.source {
            DataSource::Tudataset if d.name.is_empty() => {
                Err(Error::config("data.name must name the dataset"))
            }
            DataSource::Synthetic if d.graphs < 2 || d.classes == 0 => {
                Err(Error::config("synthetic data needs graphs >= 2 and classes >= 1"))
            }
            DataSource::SyntheticRegression if d.graphs < 2 => {
                Err(Error::config("synthetic data needs graphs >= 2"))
            }
            _ => Ok(()),
        }
    }

    /// Fully expanded TOML; parsing it gives back an equal config.
    pub fn snapshot(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Loads or generates the configured dataset.
    pub fn load_dataset(&self) -> Result<Dataset> {
        let d = &self.data;
        match d.source {
            DataSource::Tudataset => load_tudataset(&d.dir, &d.name),
            DataSource::Synthetic => Ok(Dataset::new(
                "synthetic",
                synthetic_dataset(d.synth_seed, d.graphs, d.classes),
            )),
            DataSource::SyntheticRegression => Ok(Dataset::new(
                "synthetic-regression",
                synthetic_regression(d.synth_seed, d.graphs),
            )),
        }
    }

    /// Model shape for `dataset`; `supervised` attaches a prediction head.
    pub fn model_config(&self, dataset: &Dataset, supervised: bool) -> Result<ModelConfig> {
        let graphs = &dataset.graphs;
        let first = graphs
            .first()
            .ok_or_else(|| Error::DataMismatch("dataset has no graphs".into()))?;
        let (input_dim, degree_cap) = match &first.node_attrs {
            Some(x) if dataset.meta.has_node_attrs => (x.cols(), None),
            _ => {
                let cap = self.data.max_degree.unwrap_or_else(|| max_degree(graphs));
                (cap + 1, Some(cap))
            }
        };
        let edge_dim = match (&first.edge_attrs, self.data.edge_features) {
            (Some(e), true) if dataset.meta.has_edge_attrs && e.cols() > 0 => Some(e.cols()),
            _ => None,
        };
        let task = if supervised {
            Some(match &first.label {
                Some(Label::Target(t)) => Task::Regression { targets: t.len() },
                Some(Label::Class(_)) => Task::Classification {
                    classes: dataset.meta.num_classes.max(2),
                },
                None => return Err(Error::DataMismatch("graphs carry no labels".into())),
            })
        } else {
            None
        };
        Ok(ModelConfig {
            encoder: EncoderConfig {
                input_dim,
                edge_dim,
                hidden: self.encoder.hidden,
                layers: self.encoder.layers,
                readout: self.encoder.readout,
            },
            generator: self.generator.kind(),
            task,
            max_degree: degree_cap,
        })
    }
}
