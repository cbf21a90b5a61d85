//! Item universes, sets, multisets of observed orders and the item graph.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The vocabulary of real items. Index `n` is reserved for the stop item.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ItemUniverse {
    n: usize,
    labels: Option<Vec<String>>,
    lookup: HashMap<String, usize>,
}

impl ItemUniverse {
    /// A universe of `n` items without external labels.
    pub fn unlabeled(n: usize) -> Self {
        Self {
            n,
            labels: None,
            lookup: HashMap::new(),
        }
    }

    pub fn from_labels<I, S>(labels: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut universe = Self {
            n: 0,
            labels: Some(Vec::new()),
            lookup: HashMap::new(),
        };
        for label in labels {
            let label = label.into();
            if universe.lookup.contains_key(&label) {
                return Err(Error::DuplicateLabel(label));
            }
            universe.intern(&label);
        }
        Ok(universe)
    }

    /// Number of real items.
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn stop_index(&self) -> usize {
        self.n
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    /// External label of `item`, or its decimal index when unlabeled.
    pub fn label(&self, item: usize) -> String {
        match &self.labels {
            Some(labels) => labels[item].clone(),
            None => item.to_string(),
        }
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        match &self.labels {
            Some(_) => self.lookup.get(label).copied(),
            None => label.parse::<usize>().ok().filter(|&i| i < self.n),
        }
    }

    /// Returns the index for `label`, assigning the next dense index when
    /// the label is new. Unlabeled universes become labeled on first use.
    pub fn intern(&mut self, label: &str) -> usize {
        if let Some(&i) = self.lookup.get(label) {
            return i;
        }
        let labels = self
            .labels
            .get_or_insert_with(|| (0..self.n).map(|i| i.to_string()).collect());
        if self.lookup.is_empty() {
            for (i, l) in labels.iter().enumerate() {
                self.lookup.insert(l.clone(), i);
            }
            if let Some(&i) = self.lookup.get(label) {
                return i;
            }
        }
        let index = labels.len();
        labels.push(label.to_owned());
        self.lookup.insert(label.to_owned(), index);
        self.n = index + 1;
        index
    }

    /// Formats a set as comma-separated labels.
    pub fn format_set(&self, set: &ItemSet) -> String {
        set.items()
            .iter()
            .map(|&i| self.label(i))
            .collect::<Vec<_>>()
            .join(",")
    }

    /// Parses comma-separated labels into a set of known items.
    pub fn parse_set(&self, text: &str) -> Result<ItemSet> {
        let mut items = Vec::new();
        for token in text.split(',') {
            let token = token.trim();
            match self.index_of(token) {
                Some(i) => items.push(i),
                None => return Err(Error::InvalidSet(format!("unknown item {token:?}"))),
            }
        }
        ItemSet::new(items)
    }
}

/// A non-empty set of real items stored as a strictly increasing index list.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ItemSet(Vec<usize>);

impl ItemSet {
    /// Builds a set from any item list; duplicates collapse.
    pub fn new(mut items: Vec<usize>) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::InvalidSet("the empty set is not a valid order".into()));
        }
        items.sort_unstable();
        items.dedup();
        Ok(Self(items))
    }

    /// The set whose members are the bits of `mask`.
    pub fn from_mask(mask: u64) -> Result<Self> {
        Self::new((0..64).filter(|b| mask >> b & 1 == 1).collect())
    }

    pub fn items(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, item: usize) -> bool {
        self.0.binary_search(&item).is_ok()
    }

    /// Bitmask of the members; only valid when every item is below 64.
    pub fn mask(&self) -> u64 {
        self.0.iter().fold(0u64, |m, &i| m | 1 << i)
    }

    pub fn max_item(&self) -> usize {
        *self.0.last().expect("item sets are non-empty")
    }
}

impl fmt::Display for ItemSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (k, i) in self.0.iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{i}")?;
        }
        write!(f, "}}")
    }
}

/// An empirical multiset of sets, kept in sorted support order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SetMultiset {
    entries: BTreeMap<ItemSet, u64>,
    total: u64,
}

impl SetMultiset {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, set: ItemSet, count: u64) {
        if count == 0 {
            return;
        }
        *self.entries.entry(set).or_insert(0) += count;
        self.total += count;
    }

    pub fn extend(&mut self, other: &SetMultiset) {
        for (set, &count) in other.iter() {
            self.insert(set.clone(), count);
        }
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn support_len(&self) -> usize {
        self.entries.len()
    }

    pub fn count(&self, set: &ItemSet) -> u64 {
        self.entries.get(set).copied().unwrap_or(0)
    }

    pub fn frequency(&self, set: &ItemSet) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.count(set) as f64 / self.total as f64
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ItemSet, &u64)> {
        self.entries.iter()
    }

    pub fn max_size(&self) -> usize {
        self.entries.keys().map(ItemSet::len).max().unwrap_or(0)
    }

    /// Every instance in sorted support order, repeated by count.
    pub fn expand(&self) -> Vec<ItemSet> {
        let mut out = Vec::with_capacity(self.total as usize);
        for (set, &count) in &self.entries {
            out.extend(std::iter::repeat_n(set.clone(), count as usize));
        }
        out
    }

    /// Entries whose size is `k`.
    pub fn bucket(&self, k: usize) -> Vec<(&ItemSet, u64)> {
        self.entries
            .iter()
            .filter(|(s, _)| s.len() == k)
            .map(|(s, &c)| (s, c))
            .collect()
    }

    /// Counts per size, index `k - 1`.
    pub fn size_counts(&self) -> Vec<u64> {
        let mut counts = vec![0u64; self.max_size()];
        for (set, &c) in &self.entries {
            counts[set.len() - 1] += c;
        }
        counts
    }

    /// Writes one line per instance, items rendered through `universe`.
    pub fn write_orders<W: Write>(&self, universe: &ItemUniverse, mut out: W) -> std::io::Result<()> {
        for (set, &count) in &self.entries {
            let line = universe.format_set(set);
            for _ in 0..count {
                writeln!(out, "{line}")?;
            }
        }
        Ok(())
    }
}

impl FromIterator<ItemSet> for SetMultiset {
    fn from_iter<T: IntoIterator<Item = ItemSet>>(iter: T) -> Self {
        let mut m = SetMultiset::new();
        for s in iter {
            m.insert(s, 1);
        }
        m
    }
}

/// A distribution over set sizes `1..=K`, stored at index `k - 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SizeDistribution {
    probs: Vec<f64>,
}

impl SizeDistribution {
    pub const TOLERANCE: f64 = 1e-9;

    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidDistribution("no sizes".into()));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidDistribution(
                "size probabilities must be finite and non-negative".into(),
            ));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > Self::TOLERANCE {
            return Err(Error::InvalidDistribution(format!(
                "size probabilities sum to {sum}"
            )));
        }
        Ok(Self { probs })
    }

    pub fn from_counts(counts: &[u64]) -> Result<Self> {
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return Err(Error::InvalidDistribution("all size counts are zero".into()));
        }
        Self::new(counts.iter().map(|&c| c as f64 / total as f64).collect())
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Largest size K.
    pub fn max_size(&self) -> usize {
        self.probs.len()
    }

    /// Probability of size `k`; zero outside `1..=K`.
    pub fn prob(&self, k: usize) -> f64 {
        if k == 0 {
            0.0
        } else {
            self.probs.get(k - 1).copied().unwrap_or(0.0)
        }
    }
}

/// Result of reading an order file.
#[derive(Clone, Debug)]
pub struct LoadedOrders {
    pub universe: ItemUniverse,
    pub orders: SetMultiset,
    /// Lines that held no items after trimming.
    pub skipped_lines: usize,
}

/// Reads an order file, assigning item indices in first-seen order.
pub fn load_orders(path: impl AsRef<Path>) -> Result<LoadedOrders> {
    let mut universe = ItemUniverse::from_labels(Vec::<String>::new())?;
    let (orders, skipped_lines) = load_orders_into(path, &mut universe)?;
    Ok(LoadedOrders {
        universe,
        orders,
        skipped_lines,
    })
}

/// Reads an order file against an existing universe, interning new labels.
/// Returns the multiset and the number of skipped empty lines.
pub fn load_orders_into(
    path: impl AsRef<Path>,
    universe: &mut ItemUniverse,
) -> Result<(SetMultiset, usize)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let (orders, skipped) = parse_orders(BufReader::new(file), universe)
        .map_err(|e| match e {
            Error::Io { source, .. } => Error::io(path, source),
            other => other,
        })?;
    if orders.is_empty() {
        return Err(Error::EmptyOrders { path: path.to_owned() });
    }
    Ok((orders, skipped))
}

/// Parses order lines. Blank lines are skipped and counted; lines starting
/// with `#` are ignored.
pub fn parse_orders<R: BufRead>(reader: R, universe: &mut ItemUniverse) -> Result<(SetMultiset, usize)> {
    let mut orders = SetMultiset::new();
    let mut skipped = 0;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<reader>", e))?;
        let line = line.trim();
        if line.starts_with('#') {
            continue;
        }
        if line.is_empty() {
            skipped += 1;
            continue;
        }
        let mut items = Vec::new();
        for token in line.split(',') {
            let token = token.trim();
            if token.is_empty() || token.chars().any(|c| c.is_whitespace() || c.is_control()) {
                return Err(Error::MalformedToken {
                    line: lineno + 1,
                    token: token.to_owned(),
                });
            }
            items.push(universe.intern(token));
        }
        orders.insert(ItemSet::new(items)?, 1);
    }
    Ok((orders, skipped))
}

/// Co-occurrence graph over real items. The stop item is implicitly
/// adjacent to every item and never stored.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ItemGraph {
    universe: ItemUniverse,
    adjacency: Vec<Vec<usize>>,
}

impl ItemGraph {
    /// Builds a graph from an edge list; each pair may appear in either
    /// orientation and repeats are merged.
    pub fn from_edges(universe: ItemUniverse, edges: &[(usize, usize)]) -> Result<Self> {
        let n = universe.len();
        let mut adjacency = vec![Vec::new(); n];
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::InvalidGraph(format!("edge ({a},{b}) outside {n} items")));
            }
            if a == b {
                return Err(Error::InvalidGraph(format!("self loop on {a}")));
            }
            adjacency[a].push(b);
            adjacency[b].push(a);
        }
        for adj in &mut adjacency {
            adj.sort_unstable();
            adj.dedup();
        }
        Ok(Self { universe, adjacency })
    }

    /// Builds a graph from per-item neighbor lists, rejecting asymmetry.
    pub fn from_adjacency(universe: ItemUniverse, adjacency: Vec<Vec<usize>>) -> Result<Self> {
        let n = universe.len();
        if adjacency.len() != n {
            return Err(Error::InvalidGraph(format!(
                "{} adjacency lists for {n} items",
                adjacency.len()
            )));
        }
        let mut graph = Self { universe, adjacency };
        for adj in &mut graph.adjacency {
            adj.sort_unstable();
            adj.dedup();
        }
        for (i, adj) in graph.adjacency.iter().enumerate() {
            for &j in adj {
                if j >= n || j == i || graph.adjacency[j].binary_search(&i).is_err() {
                    return Err(Error::InvalidGraph(format!("edge {i}->{j} is not symmetric")));
                }
            }
        }
        Ok(graph)
    }

    pub fn complete(universe: ItemUniverse) -> Self {
        let n = universe.len();
        let adjacency = (0..n).map(|i| (0..n).filter(|&j| j != i).collect()).collect();
        Self { universe, adjacency }
    }

    pub fn universe(&self) -> &ItemUniverse {
        &self.universe
    }

    pub fn n_items(&self) -> usize {
        self.universe.len()
    }

    pub fn neighbors(&self, item: usize) -> &[usize] {
        &self.adjacency[item]
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.adjacency
            .get(a)
            .is_some_and(|adj| adj.binary_search(&b).is_ok())
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Each undirected edge once, as `(low, high)` in sorted order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.edge_count());
        for (i, adj) in self.adjacency.iter().enumerate() {
            out.extend(adj.iter().filter(|&&j| j > i).map(|&j| (i, j)));
        }
        out
    }
}

/// Connects every pair of items that co-occur in some training set.
pub fn build_item_graph(train: &SetMultiset, universe: &ItemUniverse) -> Result<ItemGraph> {
    let n = universe.len();
    let mut adjacency = vec![Vec::new(); n];
    for (set, _) in train.iter() {
        if set.max_item() >= n {
            return Err(Error::UnknownItem {
                item: set.max_item(),
                n,
            });
        }
        let items = set.items();
        for (k, &a) in items.iter().enumerate() {
            for &b in &items[k + 1..] {
                adjacency[a].push(b);
                adjacency[b].push(a);
            }
        }
    }
    for adj in &mut adjacency {
        adj.sort_unstable();
        adj.dedup();
    }
    Ok(ItemGraph {
        universe: universe.clone(),
        adjacency,
    })
}

/// Fraction of instances per size; K is the largest observed size.
pub fn empirical_size_distribution(data: &SetMultiset) -> Result<SizeDistribution> {
    SizeDistribution::from_counts(&data.size_counts())
}

/// True when the subgraph induced by `set` is connected. Sets with items
/// outside the graph's universe are never connected.
pub fn induced_subgraph_connected(graph: &ItemGraph, set: &ItemSet) -> bool {
    let items = set.items();
    if set.max_item() >= graph.n_items() {
        return false;
    }
    let mut seen = vec![false; items.len()];
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    let mut reached = 1;
    while let Some(k) = queue.pop_front() {
        for &nb in graph.neighbors(items[k]) {
            if let Ok(pos) = items.binary_search(&nb) {
                if !seen[pos] {
                    seen[pos] = true;
                    reached += 1;
                    queue.push_back(pos);
                }
            }
        }
    }
    reached == items.len()
}
