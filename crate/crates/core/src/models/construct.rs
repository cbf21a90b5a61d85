//! Builds conditional tables that realize an arbitrary distribution over
//! the non-empty subsets of `m` items on the complete graph.
//!
//! The construction recurses on the last item `v`. Sets without `v` are
//! produced by first choosing an item other than `v` and then following the
//! table built for the excluded part. Sets with `v` start with `v` and then
//! follow the table built for the remainder. At the state `{v}` the item
//! transitions are scaled by `(I - q({v})) / I`, where `I` is the included
//! mass, so that the row stays stochastic.

use std::collections::BTreeMap;

use super::TabularModel;
use crate::data::{ItemGraph, ItemSet, ItemUniverse};
use crate::error::{Error, Result};

/// Largest number of items the constructor accepts.
pub const MAX_CONSTRUCT_ITEMS: usize = 12;

const MASS_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug)]
struct Row {
    stop: f64,
    next: Vec<f64>,
}

/// Constructs the tables from a dense vector indexed by subset mask
/// (`q.len() == 2^m`, `q[0] == 0`).
pub fn theorem2_construct(q: &[f64]) -> Result<TabularModel> {
    let len = q.len();
    if len < 2 || !len.is_power_of_two() {
        return Err(Error::InvalidDistribution(format!(
            "expected 2^m entries with m >= 1, got {len}"
        )));
    }
    let m = len.trailing_zeros() as usize;
    if m > MAX_CONSTRUCT_ITEMS {
        return Err(Error::InvalidDistribution(format!(
            "at most {MAX_CONSTRUCT_ITEMS} items supported, got {m}"
        )));
    }
    if q.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::InvalidDistribution("negative or non-finite probability".into()));
    }
    if q[0] != 0.0 {
        return Err(Error::InvalidDistribution("the empty set must have probability 0".into()));
    }
    let total: f64 = q.iter().sum();
    if (total - 1.0).abs() > MASS_TOLERANCE {
        return Err(Error::InvalidDistribution(format!("probabilities sum to {total}")));
    }
    let rows = build(q, m);
    let graph = ItemGraph::complete(ItemUniverse::unlabeled(m));
    let table = rows.into_iter().enumerate().map(|(mask, row)| {
        let mut probs = row.next;
        probs.push(row.stop);
        (mask as u64, probs)
    });
    TabularModel::new(graph, table)
}

/// Same as [`theorem2_construct`] from a sparse map over `m` items.
pub fn theorem2_construct_from(m: usize, q: &BTreeMap<ItemSet, f64>) -> Result<TabularModel> {
    if m == 0 || m > MAX_CONSTRUCT_ITEMS {
        return Err(Error::InvalidDistribution(format!(
            "item count must be in 1..={MAX_CONSTRUCT_ITEMS}, got {m}"
        )));
    }
    let mut dense = vec![0.0; 1 << m];
    for (set, &p) in q {
        if set.max_item() >= m {
            return Err(Error::UnknownItem {
                item: set.max_item(),
                n: m,
            });
        }
        dense[set.mask() as usize] = p;
    }
    theorem2_construct(&dense)
}

/// Uniform over the non-empty subsets; stands in for a branch with no mass.
fn uniform(m: usize) -> Vec<f64> {
    let k = (1usize << m) - 1;
    let mut q = vec![1.0 / k as f64; 1 << m];
    q[0] = 0.0;
    q
}

fn build(q: &[f64], m: usize) -> Vec<Row> {
    if m == 1 {
        return vec![
            Row {
                stop: 0.0,
                next: vec![1.0],
            },
            Row {
                stop: 1.0,
                next: vec![0.0],
            },
        ];
    }
    let last = m - 1;
    let bit = 1usize << last;
    let half = bit;
    let excluded: f64 = q[..half].iter().sum();
    let included: f64 = q[half..].iter().sum();
    let single = q[bit];

    let q1 = if excluded > 0.0 {
        q[..half].iter().map(|p| p / excluded).collect()
    } else {
        uniform(last)
    };
    let rest = included - single;
    let q2 = if rest > 0.0 {
        let mut v: Vec<f64> = q[half..].iter().map(|p| p / rest).collect();
        v[0] = 0.0;
        v
    } else {
        uniform(last)
    };
    let p1 = build(&q1, last);
    let p2 = build(&q2, last);

    let mut rows = Vec::with_capacity(1 << m);
    for (s, child) in p1.iter().enumerate() {
        let mut next = vec![0.0; m];
        let stop;
        if s == 0 {
            for v in 0..last {
                next[v] = child.next[v] * excluded;
            }
            next[last] = included;
            stop = 0.0;
        } else {
            next[..last].copy_from_slice(&child.next);
            stop = child.stop;
        }
        rows.push(Row { stop, next });
    }
    for (a, child) in p2.iter().enumerate() {
        let mut next = vec![0.0; m];
        let stop;
        if a == 0 {
            if included > 0.0 {
                stop = single / included;
                let scale = rest / included;
                for v in 0..last {
                    next[v] = child.next[v] * scale;
                }
            } else {
                stop = 1.0;
            }
        } else {
            next[..last].copy_from_slice(&child.next);
            stop = child.stop;
        }
        rows.push(Row { stop, next });
    }
    rows
}
