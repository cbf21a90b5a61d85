use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::neural::parameter_names;
use super::{ModelKind, NeuralModel};
use crate::data::{ItemGraph, ItemUniverse, SizeDistribution};
use crate::error::{Error, Result};
use crate::numerics::{Activation, ParameterStore};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamRecord {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// Size statistics of the training data, kept for size biasing at
/// generation time.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingStats {
    /// `size_counts[k - 1]` sets of size `k`.
    pub size_counts: Vec<u64>,
    pub n_train: u64,
}

impl TrainingStats {
    pub fn size_distribution(&self) -> Result<SizeDistribution> {
        SizeDistribution::from_counts(&self.size_counts)
    }
}

/// Serialized form of a neural model. Parameters are keyed by name, so
/// the document is independent of registration order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub kind: ModelKind,
    pub n: usize,
    pub d: usize,
    pub max_size: usize,
    /// External item labels; empty for an unlabeled universe.
    pub labels: Vec<String>,
    pub graph_edges: Vec<(usize, usize)>,
    pub parameters: BTreeMap<String, ParamRecord>,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training: Option<TrainingStats>,
}

impl Checkpoint {
    pub fn from_model(model: &NeuralModel, training: Option<TrainingStats>) -> Self {
        let graph = model.graph();
        let parameters = model
            .store()
            .params()
            .iter()
            .map(|p| {
                (
                    p.name.clone(),
                    ParamRecord {
                        shape: p.shape.clone(),
                        values: p.value.clone(),
                    },
                )
            })
            .collect();
        Self {
            format_version: CHECKPOINT_FORMAT_VERSION,
            kind: model.kind(),
            n: graph.n_items(),
            d: model.dim(),
            max_size: model.max_size(),
            labels: graph.universe().labels().map(<[String]>::to_vec).unwrap_or_default(),
            graph_edges: graph.edges(),
            parameters,
            activation: model.activation(),
            training,
        }
    }

    /// Rebuilds the model, validating the graph and every array shape.
    pub fn to_model(&self) -> Result<NeuralModel> {
        if self.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {}",
                self.format_version
            )));
        }
        if self.kind == ModelKind::Tabular {
            return Err(Error::Checkpoint("tabular models have no checkpoint form".into()));
        }
        let universe = if self.labels.is_empty() {
            ItemUniverse::unlabeled(self.n)
        } else {
            ItemUniverse::from_labels(self.labels.iter().cloned())?
        };
        if universe.len() != self.n {
            return Err(Error::Checkpoint(format!(
                "{} labels for {} items",
                universe.len(),
                self.n
            )));
        }
        let graph = ItemGraph::from_edges(universe, &self.graph_edges)?;
        let names = parameter_names(self.kind);
        if let Some(extra) = self.parameters.keys().find(|k| !names.contains(k)) {
            return Err(Error::Checkpoint(format!(
                "unexpected parameter {extra} for a {} model",
                self.kind.as_str()
            )));
        }
        let mut store = ParameterStore::new();
        for name in names {
            let rec = self
                .parameters
                .get(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
            store.add(name, rec.shape.clone(), rec.values.clone())?;
        }
        let model = NeuralModel::from_parts(self.kind, graph, self.max_size, store, self.activation)?;
        if model.dim() != self.d {
            return Err(Error::Checkpoint(format!(
                "embedding width {} does not match d = {}",
                model.dim(),
                self.d
            )));
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer_pretty(&mut w, self)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_reader(BufReader::new(file))
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
    }
}
