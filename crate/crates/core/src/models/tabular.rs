use std::collections::HashMap;

use super::{candidate_actions, Action, GenState};
use crate::data::{ItemGraph, ItemSet, ItemUniverse};
use crate::error::{Error, Result};

const ROW_TOLERANCE: f64 = 1e-9;

/// Explicit conditionals `p(x | S)` and `p(stop | S)` keyed by the added
/// set. Used for ground truths and oracles; not trainable.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularModel {
    graph: ItemGraph,
    max_size: usize,
    /// mask -> probabilities for items `0..n` followed by stop.
    rows: HashMap<u64, Vec<f64>>,
}

/// One state of [`TabularModel::from_entries`]: the state's labels and its
/// sparse `(label or None for stop, p)` row.
pub type LabelledRow<'a> = (&'a [&'a str], &'a [(Option<&'a str>, f64)]);

impl TabularModel {
    /// Builds a model from `(state set, row)` pairs. The empty state uses
    /// mask 0; each row holds `n` item probabilities followed by the stop
    /// probability. States without a row cannot be entered.
    pub fn new(graph: ItemGraph, rows: impl IntoIterator<Item = (u64, Vec<f64>)>) -> Result<Self> {
        let n = graph.n_items();
        if n > 63 {
            return Err(Error::InvalidDistribution(format!(
                "tabular models support at most 63 items, got {n}"
            )));
        }
        let mut table = HashMap::new();
        for (mask, row) in rows {
            if mask >> n != 0 {
                return Err(Error::InvalidDistribution(format!("state {mask:#b} has unknown items")));
            }
            if row.len() != n + 1 {
                return Err(Error::InvalidDistribution(format!(
                    "state {mask:#b}: row has {} entries, expected {}",
                    row.len(),
                    n + 1
                )));
            }
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(Error::InvalidDistribution(format!("state {mask:#b}: negative or non-finite entry")));
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > ROW_TOLERANCE {
                return Err(Error::InvalidDistribution(format!("state {mask:#b}: row sums to {total}")));
            }
            let added: Vec<usize> = (0..n).filter(|i| mask >> i & 1 == 1).collect();
            let allowed = candidate_actions(&graph, &added, n);
            for (j, &p) in row.iter().enumerate() {
                let action = if j == n { Action::Stop } else { Action::Add(j) };
                if p > 0.0 && !allowed.contains(&action) {
                    return Err(Error::InvalidDistribution(format!(
                        "state {mask:#b}: positive mass on non-candidate {action}"
                    )));
                }
            }
            if table.insert(mask, row).is_some() {
                return Err(Error::InvalidDistribution(format!("state {mask:#b} given twice")));
            }
        }
        Ok(Self {
            graph,
            max_size: n.max(1),
            rows: table,
        })
    }

    /// Convenience constructor from labelled sparse entries: each state is
    /// a list of labels and each entry is `(label or None for stop, p)`.
    pub fn from_entries(graph: ItemGraph, entries: &[LabelledRow<'_>]) -> Result<Self> {
        let n = graph.n_items();
        let universe = graph.universe().clone();
        let lookup = |label: &str| {
            universe
                .index_of(label)
                .ok_or_else(|| Error::InvalidSet(format!("unknown label {label:?}")))
        };
        let mut rows = Vec::new();
        for (state, probs) in entries {
            let mut mask = 0u64;
            for l in state.iter() {
                mask |= 1 << lookup(l)?;
            }
            let mut row = vec![0.0; n + 1];
            for (target, p) in probs.iter() {
                let j = match target {
                    Some(l) => lookup(l)?,
                    None => n,
                };
                row[j] += p;
            }
            rows.push((mask, row));
        }
        Self::new(graph, rows)
    }

    pub fn graph(&self) -> &ItemGraph {
        &self.graph
    }

    pub fn universe(&self) -> &ItemUniverse {
        self.graph.universe()
    }

    pub fn max_size(&self) -> usize {
        self.max_size
    }

    /// Replaces labels without touching the tables.
    pub fn relabel(mut self, universe: ItemUniverse) -> Result<Self> {
        if universe.len() != self.graph.n_items() {
            return Err(Error::Config(format!(
                "universe has {} items, model has {}",
                universe.len(),
                self.graph.n_items()
            )));
        }
        let adjacency = (0..self.graph.n_items())
            .map(|i| self.graph.neighbors(i).to_vec())
            .collect();
        self.graph = ItemGraph::from_adjacency(universe, adjacency)?;
        Ok(self)
    }

    /// Stored probability of `action` at the state holding `set` (`None`
    /// for the empty state), or `None` when no row exists.
    pub fn prob(&self, set: Option<&ItemSet>, action: Action) -> Option<f64> {
        let row = self.rows.get(&set.map_or(0, ItemSet::mask))?;
        Some(match action {
            Action::Add(i) => row.get(i).copied().unwrap_or(0.0),
            Action::Stop => row[self.graph.n_items()],
        })
    }

    pub(crate) fn candidate_logprobs(&self, state: &GenState, cands: &[Action]) -> Result<Vec<f64>> {
        let mask = state.added().iter().fold(0u64, |m, &i| m | 1 << i);
        let row = self.rows.get(&mask).ok_or_else(|| {
            Error::InvalidDistribution(format!("no conditional table for state {:?}", state.added()))
        })?;
        let n = self.graph.n_items();
        Ok(cands
            .iter()
            .map(|a| match a {
                Action::Add(i) => row[*i].ln(),
                Action::Stop => row[n].ln(),
            })
            .collect())
    }
}
