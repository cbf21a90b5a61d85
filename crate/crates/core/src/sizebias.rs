//! Size-distribution tools: the biased size heuristic, size-stratified
//! recombination of generated pools, and diagnostics relating per-size
//! estimation error to the distance between distributions.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::data::{ItemSet, SetMultiset, SizeDistribution};
use crate::error::{Error, Result};

/// The empirical size distribution, its biased counterpart and the
/// intermediate rest proportions.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BiasedSizePlan {
    pub empirical: SizeDistribution,
    pub biased: SizeDistribution,
    /// `r_k = p_k / (p_k + ... + p_K)`.
    pub rest: Vec<f64>,
    /// `r'_k = min(r_k + k * scale, 1)`.
    pub adjusted: Vec<f64>,
    pub scale: f64,
}

/// Shifts size mass toward small sizes using the adjustment scale
/// `sqrt(n_items / n_train)`.
pub fn biased_sizes(empirical: &SizeDistribution, n_items: usize, n_train: u64) -> Result<BiasedSizePlan> {
    if n_train == 0 {
        return Err(Error::Config("training set size must be positive".into()));
    }
    biased_sizes_with_scale(empirical, (n_items as f64 / n_train as f64).sqrt())
}

pub fn biased_sizes_with_scale(empirical: &SizeDistribution, scale: f64) -> Result<BiasedSizePlan> {
    if !(scale.is_finite() && scale >= 0.0) {
        return Err(Error::Config(format!("adjustment scale must be non-negative, got {scale}")));
    }
    let p = empirical.probs();
    if p.iter().all(|&x| x == 0.0) {
        return Err(Error::InvalidDistribution("all sizes have zero probability".into()));
    }
    let k_max = p.len();
    let mut rest = vec![0.0; k_max];
    let mut tail = 0.0;
    for k in (0..k_max).rev() {
        tail += p[k];
        rest[k] = if tail > 0.0 { (p[k] / tail).min(1.0) } else { 1.0 };
    }
    // the last positive size always absorbs the remaining mass
    if let Some(last) = p.iter().rposition(|&x| x > 0.0) {
        rest[last] = 1.0;
    }
    let adjusted: Vec<f64> = rest
        .iter()
        .enumerate()
        .map(|(i, &r)| (r + (i + 1) as f64 * scale).min(1.0))
        .collect();
    let mut biased = Vec::with_capacity(k_max);
    let mut survive = 1.0;
    for &r in &adjusted {
        biased.push(survive * r);
        survive *= 1.0 - r;
    }
    Ok(BiasedSizePlan {
        empirical: empirical.clone(),
        biased: SizeDistribution::new(biased)?,
        rest,
        adjusted,
        scale,
    })
}

/// Splits `total` into integer counts proportional to `probs`; leftover
/// units go to the largest fractional parts, ties to the smaller size.
pub fn largest_remainder(probs: &[f64], total: u64) -> Vec<u64> {
    let exact: Vec<f64> = probs.iter().map(|p| p * total as f64).collect();
    let mut counts: Vec<u64> = exact.iter().map(|x| x.floor() as u64).collect();
    let assigned: u64 = counts.iter().sum();
    let mut order: Vec<usize> = (0..probs.len()).filter(|&i| probs[i] > 0.0).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    let left = total.saturating_sub(assigned) as usize;
    for &i in order.iter().cycle().take(if order.is_empty() { 0 } else { left }) {
        counts[i] += 1;
    }
    counts
}

fn draw_from_bucket<R: Rng + ?Sized>(
    source: &SetMultiset,
    k: usize,
    count: u64,
    rng: &mut R,
    out: &mut SetMultiset,
) -> Result<()> {
    let bucket = source.bucket(k);
    if bucket.is_empty() {
        return Err(Error::EmptyBucket(k));
    }
    let index = WeightedIndex::new(bucket.iter().map(|(_, c)| *c))
        .map_err(|e| Error::InvalidDistribution(e.to_string()))?;
    for _ in 0..count {
        out.insert(bucket[index.sample(rng)].0.clone(), 1);
    }
    Ok(())
}

/// Resamples `count` sets whose sizes follow `target_sizes` while keeping
/// the pool's within-size distribution.
pub fn stratified_recombine<R: Rng + ?Sized>(
    pool: &SetMultiset,
    target_sizes: &SizeDistribution,
    count: u64,
    rng: &mut R,
) -> Result<SetMultiset> {
    recombine(|_| pool, target_sizes, count, rng)
}

/// Like [`stratified_recombine`], but singletons come from the training
/// histogram and larger sets from the model pool.
pub fn hybrid_recombine<R: Rng + ?Sized>(
    histogram_train: &SetMultiset,
    model_pool: &SetMultiset,
    target_sizes: &SizeDistribution,
    count: u64,
    rng: &mut R,
) -> Result<SetMultiset> {
    recombine(
        |k| if k == 1 { histogram_train } else { model_pool },
        target_sizes,
        count,
        rng,
    )
}

fn recombine<'a, R: Rng + ?Sized>(
    source: impl Fn(usize) -> &'a SetMultiset,
    target_sizes: &SizeDistribution,
    count: u64,
    rng: &mut R,
) -> Result<SetMultiset> {
    let counts = largest_remainder(target_sizes.probs(), count);
    for (i, &c) in counts.iter().enumerate() {
        if c > 0 && source(i + 1).bucket(i + 1).is_empty() {
            return Err(Error::EmptyBucket(i + 1));
        }
    }
    let mut out = SetMultiset::new();
    for (i, &c) in counts.iter().enumerate() {
        if c > 0 {
            draw_from_bucket(source(i + 1), i + 1, c, rng, &mut out)?;
        }
    }
    Ok(out)
}

/// Exact counterpart of recombination on an explicit distribution:
/// `q(S) = q_k * dist(S) / dist_k` where `dist_k` is the size-k mass.
pub fn reweight_sizes(dist: &BTreeMap<ItemSet, f64>, target_sizes: &SizeDistribution) -> Result<BTreeMap<ItemSet, f64>> {
    let k_max = target_sizes.max_size();
    let mut mass = vec![0.0; k_max.max(dist.keys().map(ItemSet::len).max().unwrap_or(0))];
    for (s, p) in dist {
        mass[s.len() - 1] += p;
    }
    for k in 1..=k_max {
        if target_sizes.prob(k) > 0.0 && mass[k - 1] <= 0.0 {
            return Err(Error::EmptyBucket(k));
        }
    }
    Ok(dist
        .iter()
        .filter_map(|(s, p)| {
            let q = target_sizes.prob(s.len());
            (q > 0.0 && *p > 0.0).then(|| (s.clone(), q * p / mass[s.len() - 1]))
        })
        .collect())
}

fn check_pair(q: &[f64], p: &[f64]) -> Result<()> {
    if q.len() != p.len() {
        return Err(Error::InvalidDistribution(format!(
            "supports differ: {} vs {} entries",
            q.len(),
            p.len()
        )));
    }
    Ok(())
}

/// `sum_S q(S) * sgn(q(S) - p(S))` over a shared support.
pub fn derivative_stat(q: &[f64], p_star: &[f64]) -> Result<f64> {
    check_pair(q, p_star)?;
    Ok(q.iter()
        .zip(p_star)
        .map(|(a, b)| {
            if a > b {
                *a
            } else if a < b {
                -a
            } else {
                0.0
            }
        })
        .sum())
}

/// `1 + KL(q || p)` with `0 log 0 = 0`; infinite when `q` has mass where
/// `p` has none.
pub fn derivative_stat_kl(q: &[f64], p_star: &[f64]) -> Result<f64> {
    check_pair(q, p_star)?;
    let mut kl = 0.0;
    for (a, b) in q.iter().zip(p_star) {
        if *a > 0.0 {
            if *b == 0.0 {
                return Ok(f64::INFINITY);
            }
            kl += a * (a / b).ln();
        }
    }
    Ok(1.0 + kl)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VectorSource {
    /// Entries uniform on `[0, 1]`.
    Uniform,
    /// Absolute values of standard normal draws.
    Gaussian,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationSim {
    pub correlation: f64,
    /// `(l1 distance, signed derivative statistic)` per pair.
    pub points: Vec<(f64, f64)>,
}

fn random_distribution<R: Rng + ?Sized>(dims: usize, source: VectorSource, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dims)
            .map(|_| match source {
                VectorSource::Uniform => rng.random::<f64>(),
                VectorSource::Gaussian => rng.sample::<f64, _>(StandardNormal).abs(),
            })
            .collect();
        let total: f64 = v.iter().sum();
        if total > 0.0 {
            return v.into_iter().map(|x| x / total).collect();
        }
    }
}

/// Draws random distribution pairs and correlates their l1 distance with
/// the signed derivative statistic.
pub fn correlation_sim<R: Rng + ?Sized>(
    dims: usize,
    pairs: usize,
    source: VectorSource,
    rng: &mut R,
) -> Result<CorrelationSim> {
    if dims < 2 || pairs < 100 {
        return Err(Error::Config(format!(
            "need dims >= 2 and pairs >= 100, got {dims} and {pairs}"
        )));
    }
    let mut points = Vec::with_capacity(pairs);
    for _ in 0..pairs {
        let q = random_distribution(dims, source, rng);
        let p = random_distribution(dims, source, rng);
        let l1: f64 = q.iter().zip(&p).map(|(a, b)| (a - b).abs()).sum();
        points.push((l1, derivative_stat(&q, &p)?));
    }
    Ok(CorrelationSim {
        correlation: pearson(&points),
        points,
    })
}

/// Pearson correlation of paired samples; `NaN` when either side is constant.
pub fn pearson(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let (mx, my) = points
        .iter()
        .fold((0.0, 0.0), |(a, b), (x, y)| (a + x / n, b + y / n));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in points {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    sxy / (sxx * syy).sqrt()
}

/// Writes one `k<TAB>probability` line per size.
pub fn write_size_distribution<W: Write>(dist: &SizeDistribution, mut out: W) -> std::io::Result<()> {
    for (i, p) in dist.probs().iter().enumerate() {
        writeln!(out, "{}\t{}", i + 1, p)?;
    }
    Ok(())
}

/// Reads `k<TAB>probability` lines; sizes not listed get probability 0.
pub fn read_size_distribution<R: BufRead>(reader: R) -> Result<SizeDistribution> {
    let mut probs: Vec<f64> = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<size distribution>", e))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = || Error::InvalidDistribution(format!("line {}: expected \"k<TAB>probability\"", n + 1));
        let (k, p) = line.split_once('\t').ok_or_else(bad)?;
        let k: usize = k.trim().parse().map_err(|_| bad())?;
        let p: f64 = p.trim().parse().map_err(|_| bad())?;
        if k == 0 {
            return Err(bad());
        }
        if probs.len() < k {
            probs.resize(k, 0.0);
        }
        probs[k - 1] = p;
    }
    SizeDistribution::new(probs)
}
