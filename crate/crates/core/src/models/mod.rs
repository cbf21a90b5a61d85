//! Sequence-to-set models.
//!
//! Every model walks the same state machine: starting from the empty set,
//! each step either adds one item that is adjacent (in the item graph) to
//! something already added, or chooses the stop item. The first step may
//! pick any item and may not stop. A model only decides the probabilities
//! over those candidate actions.

mod checkpoint;
mod construct;
mod exact;
mod neural;
mod tabular;

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{Checkpoint, ParamRecord, TrainingStats, CHECKPOINT_FORMAT_VERSION};
pub use construct::{theorem2_construct, theorem2_construct_from};
pub use exact::{
    enumerate_paths, exact_set_distribution, set_logprob_exact, set_prob_recursion, ENUMERATION_CAP,
};
pub use neural::{ModelConfig, NeuralModel};
pub use tabular::TabularModel;

use crate::data::{ItemGraph, ItemSet};
use crate::error::{Error, Result};

/// One step of a generating path.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Action {
    Add(usize),
    Stop,
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Add(i) => write!(f, "{i}"),
            Action::Stop => write!(f, "stop"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Gru2Set,
    SetNn,
    Mrw,
    Tabular,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Gru2Set => "gru2set",
            ModelKind::SetNn => "setnn",
            ModelKind::Mrw => "mrw",
            ModelKind::Tabular => "tabular",
        }
    }

    /// Whether action probabilities depend on the state only through the
    /// set of items added so far.
    pub fn is_order_independent(self) -> bool {
        matches!(self, ModelKind::SetNn | ModelKind::Tabular)
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gru2set" => Ok(ModelKind::Gru2Set),
            "setnn" => Ok(ModelKind::SetNn),
            "mrw" => Ok(ModelKind::Mrw),
            "tabular" => Ok(ModelKind::Tabular),
            other => Err(Error::Config(format!("unknown model kind {other:?}"))),
        }
    }
}

/// Per-variant payload carried between steps.
#[derive(Clone, Debug, PartialEq)]
pub(crate) enum Memory {
    None,
    /// Running sum of the embeddings of added items.
    Sum(Vec<f64>),
}

/// A generation state: the items added so far, in order, and the choice
/// vector that scores the next action.
#[derive(Clone, Debug, PartialEq)]
pub struct GenState {
    added: Vec<usize>,
    choice: Vec<f64>,
    memory: Memory,
}

impl GenState {
    pub(crate) fn new(choice: Vec<f64>, memory: Memory) -> Self {
        Self {
            added: Vec::new(),
            choice,
            memory,
        }
    }

    pub fn added(&self) -> &[usize] {
        &self.added
    }

    pub fn choice(&self) -> &[f64] {
        &self.choice
    }

    pub fn contains(&self, item: usize) -> bool {
        self.added.contains(&item)
    }

    /// The state-associated set, or `None` for the initial state.
    pub fn set(&self) -> Option<ItemSet> {
        ItemSet::new(self.added.clone()).ok()
    }

    /// True when the added items are exactly `target`.
    pub fn matches(&self, target: &ItemSet) -> bool {
        self.added.len() == target.len() && self.added.iter().all(|&i| target.contains(i))
    }
}

/// An ordered item sequence; `terminated` means the stop item followed.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GeneratingPath {
    pub items: Vec<usize>,
    pub terminated: bool,
}

impl GeneratingPath {
    pub fn terminated(items: Vec<usize>) -> Self {
        Self {
            items,
            terminated: true,
        }
    }

    /// The set this path induces.
    pub fn to_set(&self) -> Result<ItemSet> {
        ItemSet::new(self.items.clone())
    }

    /// Actions in order, including the final stop when terminated.
    pub fn actions(&self) -> impl Iterator<Item = Action> + '_ {
        self.items
            .iter()
            .map(|&i| Action::Add(i))
            .chain(self.terminated.then_some(Action::Stop))
    }
}

/// Candidate actions for a state with the given added items. Initial
/// state: every real item. Otherwise: unadded neighbors of added items in
/// ascending order, then stop. At the size cap only stop remains.
pub fn candidate_actions(graph: &ItemGraph, added: &[usize], max_size: usize) -> Vec<Action> {
    let n = graph.n_items();
    if added.is_empty() {
        return (0..n).map(Action::Add).collect();
    }
    if added.len() >= max_size {
        return vec![Action::Stop];
    }
    let mut mark = vec![false; n];
    for &a in added {
        for &nb in graph.neighbors(a) {
            mark[nb] = true;
        }
    }
    for &a in added {
        mark[a] = false;
    }
    let mut out: Vec<Action> = (0..n).filter(|&i| mark[i]).map(Action::Add).collect();
    out.push(Action::Stop);
    out
}

/// A set generative model: one of the neural variants or explicit tables.
#[derive(Clone, Debug, PartialEq)]
pub enum SetModel {
    Neural(NeuralModel),
    Tabular(TabularModel),
}

impl From<NeuralModel> for SetModel {
    fn from(m: NeuralModel) -> Self {
        SetModel::Neural(m)
    }
}

impl From<TabularModel> for SetModel {
    fn from(m: TabularModel) -> Self {
        SetModel::Tabular(m)
    }
}

impl SetModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            SetModel::Neural(m) => m.kind(),
            SetModel::Tabular(_) => ModelKind::Tabular,
        }
    }

    pub fn graph(&self) -> &ItemGraph {
        match self {
            SetModel::Neural(m) => m.graph(),
            SetModel::Tabular(m) => m.graph(),
        }
    }

    pub fn max_size(&self) -> usize {
        match self {
            SetModel::Neural(m) => m.max_size(),
            SetModel::Tabular(m) => m.max_size(),
        }
    }

    pub fn initial_state(&self) -> GenState {
        match self {
            SetModel::Neural(m) => m.initial_state(),
            SetModel::Tabular(_) => GenState::new(Vec::new(), Memory::None),
        }
    }

    pub fn candidate_items(&self, state: &GenState) -> Vec<Action> {
        candidate_actions(self.graph(), state.added(), self.max_size())
    }

    /// Log-probabilities of every candidate action, aligned with
    /// [`candidate_items`](Self::candidate_items).
    pub fn action_logprobs(&self, state: &GenState) -> Result<Vec<(Action, f64)>> {
        let cands = self.candidate_items(state);
        if cands.is_empty() {
            return Err(Error::EmptyCandidates);
        }
        let lps = match self {
            SetModel::Neural(m) => m.candidate_logprobs(state, &cands),
            SetModel::Tabular(m) => m.candidate_logprobs(state, &cands)?,
        };
        Ok(cands.into_iter().zip(lps).collect())
    }

    pub fn action_logprob(&self, state: &GenState, action: Action) -> Result<f64> {
        self.action_logprobs(state)?
            .into_iter()
            .find(|(a, _)| *a == action)
            .map(|(_, lp)| lp)
            .ok_or(Error::NotACandidate {
                action: action.to_string(),
            })
    }

    /// Adds `item` to the state and updates the choice vector.
    pub fn advance(&self, state: &GenState, item: usize) -> Result<GenState> {
        if state.contains(item) {
            return Err(Error::DuplicateItem(item));
        }
        if item >= self.graph().n_items() {
            return Err(Error::UnknownItem {
                item,
                n: self.graph().n_items(),
            });
        }
        let mut next = match self {
            SetModel::Neural(m) => m.advance_choice(state, item),
            SetModel::Tabular(_) => state.clone(),
        };
        next.added.push(item);
        Ok(next)
    }

    /// Sum of action log-probabilities along a terminated path.
    pub fn path_logprob(&self, path: &GeneratingPath) -> Result<f64> {
        if !path.terminated {
            return Err(Error::InvalidPath {
                step: path.items.len(),
                reason: "path does not end with the stop item".into(),
            });
        }
        let mut state = self.initial_state();
        let mut total = 0.0;
        for (step, action) in path.actions().enumerate() {
            let lp = self.action_logprob(&state, action).map_err(|e| Error::InvalidPath {
                step,
                reason: e.to_string(),
            })?;
            total += lp;
            if let Action::Add(i) = action {
                state = self.advance(&state, i).map_err(|e| Error::InvalidPath {
                    step,
                    reason: e.to_string(),
                })?;
            }
        }
        Ok(total)
    }

    /// Draws one set by sampling actions until stop. The size cap forces
    /// stop once reached, so generation always terminates.
    pub fn generate_set<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ItemSet> {
        let mut state = self.initial_state();
        loop {
            let lps = self.action_logprobs(&state)?;
            match sample_action(&lps, rng)? {
                Action::Stop => break,
                Action::Add(i) => state = self.advance(&state, i)?,
            }
        }
        ItemSet::new(state.added)
    }
}

/// Draws an action from aligned log-probabilities.
pub(crate) fn sample_action<R: Rng + ?Sized>(lps: &[(Action, f64)], rng: &mut R) -> Result<Action> {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = None;
    for &(a, lp) in lps {
        let p = lp.exp();
        if p > 0.0 {
            acc += p;
            last = Some(a);
            if u < acc {
                return Ok(a);
            }
        }
    }
    last.ok_or(Error::EmptyCandidates)
}
