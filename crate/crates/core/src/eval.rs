//! Distances between set distributions, the histogram baseline, model
//! sample pools, reachability diagnostics and planted benchmarks.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde::Serialize;

use crate::data::{
    empirical_size_distribution, induced_subgraph_connected, ItemGraph, ItemSet, ItemUniverse, SetMultiset,
    SizeDistribution,
};
use crate::error::{Error, Result};
use crate::models::{theorem2_construct, SetModel, TabularModel};

/// Size buckets used by the size-wise decomposition: 1, 2, 3, 4 and 5+.
pub const SIZE_BUCKETS: usize = 5;

fn bucket_of(size: usize) -> usize {
    size.clamp(1, SIZE_BUCKETS) - 1
}

/// Walks the union of two sorted supports, yielding each set with its
/// relative frequency on both sides.
fn merged<'a>(a: &'a SetMultiset, b: &'a SetMultiset) -> Vec<(&'a ItemSet, f64, f64)> {
    let (ta, tb) = (a.total().max(1) as f64, b.total().max(1) as f64);
    let mut out = Vec::with_capacity(a.support_len() + b.support_len());
    let mut ia = a.iter().peekable();
    let mut ib = b.iter().peekable();
    loop {
        let order = match (ia.peek(), ib.peek()) {
            (None, None) => break,
            (Some(_), None) => Ordering::Less,
            (None, Some(_)) => Ordering::Greater,
            (Some((sa, _)), Some((sb, _))) => sa.cmp(sb),
        };
        match order {
            Ordering::Less => {
                let (s, c) = ia.next().expect("peeked");
                out.push((s, *c as f64 / ta, 0.0));
            }
            Ordering::Greater => {
                let (s, c) = ib.next().expect("peeked");
                out.push((s, 0.0, *c as f64 / tb));
            }
            Ordering::Equal => {
                let (s, c) = ia.next().expect("peeked");
                let (_, d) = ib.next().expect("peeked");
                out.push((s, *c as f64 / ta, *d as f64 / tb));
            }
        }
    }
    out
}

/// `sum_S |N_test(S)/|test| - N_pred(S)/|pred||`, in `[0, 2]`.
pub fn l1_distance(test: &SetMultiset, pred: &SetMultiset) -> f64 {
    merged(test, pred).iter().map(|(_, a, b)| (a - b).abs()).sum()
}

/// Overlap mass split by set size into buckets 1, 2, 3, 4 and 5+.
pub fn sizewise_overlap(test: &SetMultiset, pred: &SetMultiset) -> [f64; SIZE_BUCKETS] {
    let mut out = [0.0; SIZE_BUCKETS];
    for (s, a, b) in merged(test, pred) {
        out[bucket_of(s.len())] += a.min(b);
    }
    out
}

/// `sum_S min(N_test(S)/|test|, N_pred(S)/|pred|)`; equals `1 - l1/2`.
pub fn overlap(test: &SetMultiset, pred: &SetMultiset) -> f64 {
    sizewise_overlap(test, pred).iter().sum()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub l1: f64,
    pub overlap: f64,
    pub sizewise_overlap: Vec<f64>,
    pub sizes_pred: SizeDistribution,
    pub sizes_test: SizeDistribution,
    pub n_test: u64,
    pub n_pred: u64,
}

impl EvalReport {
    pub fn new(test: &SetMultiset, pred: &SetMultiset) -> Result<Self> {
        if test.is_empty() || pred.is_empty() {
            return Err(Error::Config("both multisets must be non-empty".into()));
        }
        Ok(Self {
            l1: l1_distance(test, pred),
            overlap: overlap(test, pred),
            sizewise_overlap: sizewise_overlap(test, pred).to_vec(),
            sizes_pred: empirical_size_distribution(pred)?,
            sizes_test: empirical_size_distribution(test)?,
            n_test: test.total(),
            n_pred: pred.total(),
        })
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<12}{:.6}", "l1", self.l1);
        let _ = writeln!(s, "{:<12}{:.6}", "overlap", self.overlap);
        for (i, o) in self.sizewise_overlap.iter().enumerate() {
            let label = if i + 1 == SIZE_BUCKETS {
                format!("o_{}+", i + 1)
            } else {
                format!("o_{}", i + 1)
            };
            let _ = writeln!(s, "{label:<12}{o:.6}");
        }
        let _ = writeln!(s, "{:<12}{}", "n_test", self.n_test);
        let _ = writeln!(s, "{:<12}{}", "n_pred", self.n_pred);
        let fmt = |d: &SizeDistribution| d.probs().iter().map(|p| format!("{p:.4}")).collect::<Vec<_>>().join(" ");
        let _ = writeln!(s, "{:<12}{}", "sizes_test", fmt(&self.sizes_test));
        let _ = writeln!(s, "{:<12}{}", "sizes_pred", fmt(&self.sizes_pred));
        s
    }
}

/// `count` draws with replacement from the training multiset.
pub fn histogram_model<R: Rng + ?Sized>(train: &SetMultiset, count: u64, rng: &mut R) -> Result<SetMultiset> {
    let support: Vec<(&ItemSet, &u64)> = train.iter().collect();
    let index = WeightedIndex::new(support.iter().map(|(_, c)| **c))
        .map_err(|_| Error::Config("training multiset is empty".into()))?;
    let mut out = SetMultiset::new();
    for _ in 0..count {
        out.insert(support[index.sample(rng)].0.clone(), 1);
    }
    Ok(out)
}

/// `count` independent model draws. Worker `w` generates a contiguous share
/// from stream `w` of a generator seeded with `seed`, so the result depends
/// only on the seed and the worker count.
pub fn generate_pool(model: &SetModel, count: u64, seed: u64, workers: usize) -> Result<SetMultiset> {
    let workers = workers.max(1) as u64;
    let share = count.div_ceil(workers).max(1);
    let run = |w: u64| -> Result<SetMultiset> {
        let start = w * share;
        let end = (start + share).min(count);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(w);
        let mut out = SetMultiset::new();
        for _ in start..end {
            out.insert(model.generate_set(&mut rng)?, 1);
        }
        Ok(out)
    };
    if workers == 1 {
        return run(0);
    }
    let parts: Vec<Result<SetMultiset>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers).map(|w| scope.spawn(move || run(w))).collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("generation worker panicked"))
            .collect()
    });
    let mut pool = SetMultiset::new();
    for part in parts {
        pool.extend(&part?);
    }
    Ok(pool)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct UnreachableReport {
    /// Weighted fraction of test sets that no model on the graph can emit.
    pub overall: f64,
    /// Same, per size bucket 1, 2, 3, 4 and 5+ (zero for empty buckets).
    pub buckets: Vec<f64>,
    /// Test sets mentioning items outside the graph's universe.
    pub out_of_universe: u64,
    pub total: u64,
}

pub fn unreachable_ratio(graph: &ItemGraph, test: &SetMultiset) -> UnreachableReport {
    let n = graph.n_items();
    let mut bad = [0u64; SIZE_BUCKETS];
    let mut all = [0u64; SIZE_BUCKETS];
    let mut out_of_universe = 0;
    for (s, &c) in test.iter() {
        let b = bucket_of(s.len());
        all[b] += c;
        if s.max_item() >= n {
            out_of_universe += c;
            bad[b] += c;
        } else if !induced_subgraph_connected(graph, s) {
            bad[b] += c;
        }
    }
    let total: u64 = all.iter().sum();
    let ratio = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    UnreachableReport {
        overall: ratio(bad.iter().sum(), total),
        buckets: bad.iter().zip(&all).map(|(&a, &b)| ratio(a, b)).collect(),
        out_of_universe,
        total,
    }
}

/// `sum_S |freq(S) - p(S)|` between an empirical multiset and an explicit
/// distribution.
pub fn l1_to_distribution(empirical: &SetMultiset, dist: &BTreeMap<ItemSet, f64>) -> f64 {
    let mut e: BTreeMap<ItemSet, f64> = BTreeMap::new();
    for (s, _) in empirical.iter() {
        e.insert(s.clone(), empirical.frequency(s));
    }
    l1_between(&e, dist)
}

/// `sum_S |p(S) - q(S)|` between two explicit distributions.
pub fn l1_between(p: &BTreeMap<ItemSet, f64>, q: &BTreeMap<ItemSet, f64>) -> f64 {
    let mut total = 0.0;
    for (s, a) in p {
        total += (a - q.get(s).copied().unwrap_or(0.0)).abs();
    }
    for (s, b) in q {
        if !p.contains_key(s) {
            total += b.abs();
        }
    }
    total
}

/// Writes one `set<TAB>probability` line per support point.
pub fn write_distribution<W: Write>(
    universe: &ItemUniverse,
    dist: &BTreeMap<ItemSet, f64>,
    mut out: W,
) -> std::io::Result<()> {
    for (s, p) in dist {
        writeln!(out, "{}\t{}", universe.format_set(s), p)?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlantConfig {
    pub n_items: usize,
    pub n_train: u64,
    pub n_test: u64,
    pub seed: u64,
    /// Optional size profile. Without it every non-empty subset gets a
    /// Dirichlet(1, ..., 1) weight; with it the weights are drawn within
    /// each size and scaled to the size's probability.
    pub size_dist: Option<SizeDistribution>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlantedBenchmark {
    pub model: TabularModel,
    pub distribution: BTreeMap<ItemSet, f64>,
    pub train: SetMultiset,
    pub test: SetMultiset,
}

/// Labels `i0`, `i1`, ... used for planted items.
pub fn planted_universe(n: usize) -> ItemUniverse {
    ItemUniverse::from_labels((0..n).map(|i| format!("i{i}"))).expect("labels are distinct")
}

/// Draws a random distribution over non-empty subsets, realizes it as
/// conditional tables and samples train and test corpora from it.
pub fn plant_benchmark(cfg: &PlantConfig) -> Result<PlantedBenchmark> {
    let m = cfg.n_items;
    if m == 0 || m > 12 {
        return Err(Error::Config(format!("planted benchmarks need 1..=12 items, got {m}")));
    }
    if let Some(sd) = &cfg.size_dist {
        if (m + 1..=sd.max_size()).any(|k| sd.prob(k) > 0.0) {
            return Err(Error::Config(format!("size profile puts mass above {m} items")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(0);
    let mut q = vec![0.0; 1 << m];
    for w in q.iter_mut().skip(1) {
        *w = rng.sample::<f64, _>(Exp1);
    }
    match &cfg.size_dist {
        None => {
            let total: f64 = q.iter().sum();
            q.iter_mut().for_each(|w| *w /= total);
        }
        Some(sd) => {
            let mut per_size = vec![0.0; m + 1];
            for (mask, w) in q.iter().enumerate() {
                per_size[mask.count_ones() as usize] += w;
            }
            for (mask, w) in q.iter_mut().enumerate() {
                let k = mask.count_ones() as usize;
                if k > 0 {
                    *w *= sd.prob(k) / per_size[k];
                }
            }
        }
    }
    let model = theorem2_construct(&q)?.relabel(planted_universe(m))?;
    let distribution: BTreeMap<ItemSet, f64> = q
        .iter()
        .enumerate()
        .filter(|(_, p)| **p > 0.0)
        .map(|(mask, p)| Ok((ItemSet::from_mask(mask as u64)?, *p)))
        .collect::<Result<_>>()?;
    let sets: Vec<&ItemSet> = distribution.keys().collect();
    let index = WeightedIndex::new(distribution.values().copied())
        .map_err(|e| Error::InvalidDistribution(e.to_string()))?;
    let draw = |stream: u64, n: u64| {
        let mut r = ChaCha8Rng::seed_from_u64(cfg.seed);
        r.set_stream(stream);
        let mut out = SetMultiset::new();
        for _ in 0..n {
            out.insert(sets[index.sample(&mut r)].clone(), 1);
        }
        out
    };
    let train = draw(1, cfg.n_train);
    let test = draw(2, cfg.n_test);
    Ok(PlantedBenchmark {
        model,
        distribution,
        train,
        test,
    })
}
