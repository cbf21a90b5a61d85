use rand::Rng;

use super::{candidate_actions, Action, GenState, GeneratingPath, Memory, ModelKind};
use crate::data::ItemGraph;
use crate::error::{Error, Result};
use crate::numerics::kernels::{dot, log_softmax};
use crate::numerics::params::normal;
use crate::numerics::{Activation, Gradients, GruCell, Mlp, NodeId, ParamId, ParameterStore, Tape};

pub(crate) const EMBEDDINGS: &str = "embeddings";
pub(crate) const INIT_CHOICE: &str = "init_choice";
pub(crate) const GRU_PREFIX: &str = "gru";
pub(crate) const MLP_PREFIX: &str = "mlp";

const EMBEDDING_STD: f64 = 0.1;

/// Construction knobs for the neural variants.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub dim: usize,
    /// MLP hidden width (SetNN only).
    pub hidden: usize,
    pub activation: Activation,
    /// Generation cap; `None` means the number of items.
    pub max_size: Option<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dim: 10,
            hidden: 50,
            activation: Activation::Tanh,
            max_size: None,
        }
    }
}

/// Parameter names in registration order for a variant.
pub(crate) fn parameter_names(kind: ModelKind) -> Vec<String> {
    let mut names = vec![EMBEDDINGS.to_string(), INIT_CHOICE.to_string()];
    match kind {
        ModelKind::Gru2Set => {
            for g in ["z", "r", "h"] {
                for w in ["w", "u", "b"] {
                    names.push(format!("{GRU_PREFIX}.{w}_{g}"));
                }
            }
        }
        ModelKind::SetNn => {
            names.extend(["w1", "b1", "w2", "b2"].map(|w| format!("{MLP_PREFIX}.{w}")));
        }
        _ => {}
    }
    names
}

#[derive(Clone, Debug, PartialEq)]
enum Body {
    Gru(GruCell),
    SetNn(Mlp),
    Mrw,
}

/// GRU2Set, SetNN or MRW over an item graph. Every variant scores action
/// `j` at state `s` by `c_s . e_j`, where row `n` of the embedding table is
/// the stop item.
#[derive(Clone, Debug, PartialEq)]
pub struct NeuralModel {
    graph: ItemGraph,
    max_size: usize,
    store: ParameterStore,
    embeddings: ParamId,
    init_choice: ParamId,
    body: Body,
}

impl NeuralModel {
    pub fn new<R: Rng + ?Sized>(kind: ModelKind, graph: ItemGraph, cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        if cfg.dim == 0 {
            return Err(Error::Config("embedding dimension must be at least 1".into()));
        }
        let n = graph.n_items();
        let d = cfg.dim;
        let mut store = ParameterStore::new();
        store.add(EMBEDDINGS, vec![n + 1, d], normal(rng, (n + 1) * d, EMBEDDING_STD))?;
        store.add(INIT_CHOICE, vec![d], normal(rng, d, EMBEDDING_STD))?;
        match kind {
            ModelKind::Gru2Set => {
                GruCell::register(&mut store, GRU_PREFIX, d, rng)?;
            }
            ModelKind::SetNn => {
                if cfg.hidden == 0 {
                    return Err(Error::Config("hidden width must be at least 1".into()));
                }
                Mlp::register(&mut store, MLP_PREFIX, (d, cfg.hidden, d), cfg.activation, rng)?;
            }
            ModelKind::Mrw => {}
            ModelKind::Tabular => {
                return Err(Error::Config("tabular models are not neural".into()));
            }
        }
        Self::from_parts(kind, graph, cfg.max_size.unwrap_or(n), store, cfg.activation)
    }

    /// Binds an existing parameter store, checking every expected array.
    pub fn from_parts(
        kind: ModelKind,
        graph: ItemGraph,
        max_size: usize,
        store: ParameterStore,
        activation: Activation,
    ) -> Result<Self> {
        if max_size == 0 {
            return Err(Error::Config("max_size must be at least 1".into()));
        }
        let n = graph.n_items();
        let embeddings = store
            .id(EMBEDDINGS)
            .ok_or_else(|| Error::Shape("missing parameter embeddings".into()))?;
        let shape = store.param(embeddings).shape.clone();
        if shape.len() != 2 || shape[0] != n + 1 || shape[1] == 0 {
            return Err(Error::Shape(format!(
                "embeddings: expected ({} x d), found {shape:?}",
                n + 1
            )));
        }
        let d = shape[1];
        let init_choice = store
            .id(INIT_CHOICE)
            .filter(|&id| store.param(id).shape == [d])
            .ok_or_else(|| Error::Shape(format!("init_choice must be a vector of length {d}")))?;
        let body = match kind {
            ModelKind::Gru2Set => Body::Gru(GruCell::from_store(&store, GRU_PREFIX, d)?),
            ModelKind::SetNn => {
                let mlp = Mlp::from_store(&store, MLP_PREFIX, activation)?;
                if mlp.input != d || mlp.output != d {
                    return Err(Error::Shape(format!("mlp must map {d} to {d} values")));
                }
                Body::SetNn(mlp)
            }
            ModelKind::Mrw => Body::Mrw,
            ModelKind::Tabular => return Err(Error::Config("tabular models are not neural".into())),
        };
        Ok(Self {
            graph,
            max_size,
            store,
            embeddings,
            init_choice,
            body,
        })
    }

    pub fn kind(&self) -> ModelKind {
        match self.body {
            Body::Gru(_) => ModelKind::Gru2Set,
            Body::SetNn(_) => ModelKind::SetNn,
            Body::Mrw => ModelKind::Mrw,
        }
    }

    pub fn graph(&self) -> &ItemGraph {
        &self.graph
    }

    pub fn max_size(&self) -> usize {
        self.max_size
    }

    pub fn set_max_size(&mut self, max_size: usize) {
        self.max_size = max_size.max(1);
    }

    pub fn dim(&self) -> usize {
        self.store.param(self.embeddings).cols()
    }

    pub fn activation(&self) -> Activation {
        match &self.body {
            Body::SetNn(mlp) => mlp.activation,
            _ => Activation::Tanh,
        }
    }

    pub fn store(&self) -> &ParameterStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParameterStore {
        &mut self.store
    }

    pub fn embedding(&self, row: usize) -> &[f64] {
        self.store.param(self.embeddings).row(row)
    }

    pub(crate) fn initial_state(&self) -> GenState {
        let c0 = self.store.value(self.init_choice).to_vec();
        match self.body {
            Body::SetNn(_) => GenState::new(c0, Memory::Sum(Vec::new())),
            _ => GenState::new(c0, Memory::None),
        }
    }

    fn row_of(&self, action: Action) -> usize {
        match action {
            Action::Add(i) => i,
            Action::Stop => self.graph.n_items(),
        }
    }

    pub(crate) fn candidate_logprobs(&self, state: &GenState, cands: &[Action]) -> Vec<f64> {
        let table = self.store.param(self.embeddings);
        let logits: Vec<f64> = cands
            .iter()
            .map(|&a| dot(&state.choice, table.row(self.row_of(a))))
            .collect();
        log_softmax(&logits)
    }

    /// New choice vector and memory after adding `item`; `added` is left
    /// to the caller.
    pub(crate) fn advance_choice(&self, state: &GenState, item: usize) -> GenState {
        let e = self.embedding(item);
        let mut next = state.clone();
        match &self.body {
            Body::Gru(cell) => next.choice = cell.step(&self.store, e, &state.choice),
            Body::SetNn(mlp) => {
                let sum = match &state.memory {
                    Memory::Sum(s) if !s.is_empty() => s.iter().zip(e).map(|(a, b)| a + b).collect(),
                    _ => e.to_vec(),
                };
                next.choice = mlp.forward(&self.store, &sum);
                next.memory = Memory::Sum(sum);
            }
            Body::Mrw => next.choice = e.to_vec(),
        }
        next
    }

    /// Records the log-probability of a terminated path on `tape` and
    /// returns the scalar node.
    pub fn path_logprob_tape(&self, tape: &mut Tape<'_>, path: &GeneratingPath) -> Result<NodeId> {
        if !path.terminated {
            return Err(Error::InvalidPath {
                step: path.items.len(),
                reason: "path does not end with the stop item".into(),
            });
        }
        let mut added: Vec<usize> = Vec::with_capacity(path.items.len());
        let mut choice = tape.param(self.init_choice);
        let mut sum: Option<NodeId> = None;
        let mut terms = Vec::with_capacity(path.items.len() + 1);
        for (step, action) in path.actions().enumerate() {
            let cands = candidate_actions(&self.graph, &added, self.max_size);
            let pick = cands.iter().position(|&a| a == action).ok_or_else(|| Error::InvalidPath {
                step,
                reason: format!("{action} is not a candidate"),
            })?;
            let rows = cands.iter().map(|&a| self.row_of(a)).collect();
            terms.push(tape.log_softmax_pick(choice, self.embeddings, rows, pick)?);
            if let Action::Add(item) = action {
                if added.contains(&item) {
                    return Err(Error::InvalidPath {
                        step,
                        reason: format!("item {item} repeated"),
                    });
                }
                let e = tape.row(self.embeddings, item);
                choice = match &self.body {
                    Body::Gru(cell) => cell.step_tape(tape, e, choice),
                    Body::SetNn(mlp) => {
                        let s = match sum {
                            Some(s) => tape.add(s, e),
                            None => e,
                        };
                        sum = Some(s);
                        mlp.forward_tape(tape, s)
                    }
                    Body::Mrw => e,
                };
                added.push(item);
            }
        }
        Ok(tape.sum(terms))
    }

    /// Adds `scale * grad log p(path)` into `grads` and returns `log p(path)`.
    pub fn accumulate_path_gradient(&self, path: &GeneratingPath, scale: f64, grads: &mut Gradients) -> Result<f64> {
        let mut tape = Tape::new(&self.store);
        let lp = self.path_logprob_tape(&mut tape, path)?;
        tape.backward(lp, scale, grads)?;
        Ok(tape.scalar(lp))
    }
}
