use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use seqset::data::load_orders_into;
use seqset::eval::{generate_pool, plant_benchmark, planted_universe, write_distribution, EvalReport, PlantConfig};
use seqset::models::{
    enumerate_paths, set_prob_recursion, Checkpoint, ModelConfig, TrainingStats, ENUMERATION_CAP,
};
use seqset::numerics::kernels::log_sum_exp;
use seqset::sampler::{derive_seed, is_reachable, sample_posterior_path, score_path, train, TrainConfig};
use seqset::sizebias::{biased_sizes, hybrid_recombine, read_size_distribution, stratified_recombine};
use seqset::{
    build_item_graph, load_orders, Error, ItemUniverse, NeuralModel, SetModel, SetMultiset, SizeDistribution,
};

use crate::manifest::ManifestBuilder;
use crate::{EvaluateArgs, GenerateArgs, OracleArgs, PlantArgs, TrainArgs};

/// Pool size relative to the requested count when recombining by size.
const OVERSAMPLE: u64 = 2;
const MAX_POOL_ROUNDS: u64 = 5;
const POOL_STREAM: u64 = 1;
const RECOMBINE_STREAM: u64 = 2;

fn create(path: &Path) -> Result<BufWriter<File>> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn read_sizes(path: &Path) -> Result<SizeDistribution> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(read_size_distribution(BufReader::new(file))?)
}

fn load_checkpoint(path: &Path) -> Result<(Checkpoint, NeuralModel)> {
    let ckpt = Checkpoint::load(path)?;
    let model = ckpt.to_model()?;
    Ok((ckpt, model))
}

pub fn train_cmd(args: &TrainArgs) -> Result<()> {
    let kind = args.model.kind();
    let (mut model, orders) = match &args.resume {
        Some(path) => {
            let (ckpt, model) = load_checkpoint(path)?;
            if ckpt.kind != kind {
                bail!("checkpoint {} holds a {} model, not {}", path.display(), ckpt.kind.as_str(), kind.as_str());
            }
            if let Some(d) = args.dim {
                if d != ckpt.d {
                    bail!("dimension mismatch: --dim {d} but checkpoint has d = {}", ckpt.d);
                }
            }
            let mut universe = model.graph().universe().clone();
            let n = universe.len();
            let (orders, _) = load_orders_into(&args.train, &mut universe)?;
            if universe.len() != n {
                bail!(
                    "{} introduces {} item(s) unknown to the checkpoint",
                    args.train.display(),
                    universe.len() - n
                );
            }
            (model, orders)
        }
        None => {
            let loaded = load_orders(&args.train)?;
            let graph = build_item_graph(&loaded.orders, &loaded.universe)?;
            let cfg = ModelConfig {
                dim: args.dim.unwrap_or(10),
                hidden: args.hidden,
                max_size: args.max_size,
                ..ModelConfig::default()
            };
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(args.seed, 0, 0));
            (NeuralModel::new(kind, graph, &cfg, &mut rng)?, loaded.orders)
        }
    };
    let cfg = TrainConfig {
        samples_per_set: args.samples,
        batch_size: args.batch,
        epochs: args.epochs,
        learning_rate: args.lr,
        seed: args.seed,
        workers: args.workers,
    };
    let mut wrapped = SetModel::Neural(model);
    train(&mut wrapped, &orders, &cfg, |r, _| {
        let line = format!("epoch {:>4}  nll {:.6}  skipped {}", r.epoch, r.nll, r.skipped);
        if args.record_time {
            println!("{line}  time {:.3}s", r.wall_time_secs);
        } else {
            println!("{line}");
        }
        ControlFlow::Continue(())
    })?;
    let SetModel::Neural(trained) = wrapped else {
        unreachable!("train keeps the model variant")
    };
    model = trained;
    let stats = TrainingStats {
        size_counts: orders.size_counts(),
        n_train: orders.total(),
    };
    Checkpoint::from_model(&model, Some(stats)).save(&args.out)?;

    let mut manifest = ManifestBuilder::new("train", args.seed, args.record_time);
    manifest
        .config("model", kind.as_str())
        .config("dim", model.dim())
        .config("hidden", args.hidden)
        .config("max_size", model.max_size())
        .config("epochs", args.epochs)
        .config("samples", args.samples)
        .config("batch", args.batch)
        .config("lr", args.lr)
        .config("workers", args.workers);
    manifest.input(&args.train)?;
    if let Some(path) = &args.resume {
        manifest.input(path)?;
    }
    manifest.output(&args.out)?;
    manifest.write(&args.out)?;
    Ok(())
}

/// Draws size-stratified output, growing the pool until every requested
/// size bucket is populated.
fn recombine_with_retries(
    model: &SetModel,
    histogram: Option<&SetMultiset>,
    target: &SizeDistribution,
    args: &GenerateArgs,
) -> Result<SetMultiset> {
    let mut pool = SetMultiset::new();
    let mut missing = 0;
    for round in 0..MAX_POOL_ROUNDS {
        let seed = derive_seed(args.seed, POOL_STREAM, round);
        pool.extend(&generate_pool(model, OVERSAMPLE * args.count, seed, args.workers)?);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(args.seed, RECOMBINE_STREAM, 0));
        let drawn = match histogram {
            Some(h) => hybrid_recombine(h, &pool, target, args.count, &mut rng),
            None => stratified_recombine(&pool, target, args.count, &mut rng),
        };
        match drawn {
            Ok(out) => return Ok(out),
            Err(Error::EmptyBucket(k)) => missing = k,
            Err(e) => return Err(e.into()),
        }
    }
    bail!("no set of size {missing} available after {MAX_POOL_ROUNDS} rounds of oversampling")
}

pub fn generate_cmd(args: &GenerateArgs) -> Result<()> {
    let (ckpt, neural) = load_checkpoint(&args.model)?;
    let model = SetModel::Neural(neural);
    let mut universe: ItemUniverse = model.graph().universe().clone();
    let training_sizes = || -> Result<(SizeDistribution, u64)> {
        let stats = ckpt
            .training
            .as_ref()
            .context("checkpoint carries no training size statistics")?;
        Ok((stats.size_distribution()?, stats.n_train))
    };
    let target = if args.size_bias {
        let (emp, n_train) = training_sizes()?;
        Some(biased_sizes(&emp, universe.len(), n_train)?.biased)
    } else if let Some(path) = &args.size_dist {
        Some(read_sizes(path)?)
    } else {
        None
    };
    let histogram = match &args.hybrid {
        Some(path) => Some(load_orders_into(path, &mut universe)?.0),
        None => None,
    };
    let out = match (target, &histogram) {
        (None, None) => generate_pool(&model, args.count, args.seed, args.workers)?,
        (target, histogram) => {
            let target = match target {
                Some(t) => t,
                None => training_sizes()?.0,
            };
            recombine_with_retries(&model, histogram.as_ref(), &target, args)?
        }
    };
    let mut w = create(&args.out)?;
    out.write_orders(&universe, &mut w)?;
    w.flush()?;
    drop(w);

    let mut manifest = ManifestBuilder::new("generate", args.seed, args.record_time);
    manifest
        .config("count", args.count)
        .config("size_bias", args.size_bias)
        .config("workers", args.workers);
    manifest.input(&args.model)?;
    if let Some(path) = &args.size_dist {
        manifest.input(path)?;
    }
    if let Some(path) = &args.hybrid {
        manifest.input(path)?;
    }
    manifest.output(&args.out)?;
    manifest.write(&args.out)?;
    Ok(())
}

pub fn evaluate_cmd(args: &EvaluateArgs) -> Result<()> {
    let mut loaded = load_orders(&args.test)?;
    let (pred, _) = load_orders_into(&args.pred, &mut loaded.universe)?;
    let report = EvalReport::new(&loaded.orders, &pred)?;
    let text = if args.json {
        let mut s = serde_json::to_string_pretty(&report)?;
        s.push('\n');
        s
    } else {
        report.to_text()
    };
    print!("{text}");
    if let Some(out) = &args.out {
        std::fs::write(out, &text).with_context(|| format!("writing {}", out.display()))?;
        let mut manifest = ManifestBuilder::new("evaluate", 0, args.record_time);
        manifest.config("json", args.json);
        manifest.input(&args.test)?.input(&args.pred)?;
        manifest.output(out)?;
        manifest.write(out)?;
    }
    Ok(())
}

/// Exact, recursive and importance-sampled likelihoods of one set.
pub fn oracle_report(model: &SetModel, set_text: &str, samples: usize, seed: u64) -> Result<String> {
    use std::fmt::Write as _;

    let set = model.graph().universe().parse_set(set_text)?;
    if set.len() > ENUMERATION_CAP {
        bail!("set has {} items; enumeration is limited to {ENUMERATION_CAP}", set.len());
    }
    let mut s = String::new();
    writeln!(s, "{:<16}{}", "set", model.graph().universe().format_set(&set))?;
    if !is_reachable(model, &set) {
        writeln!(s, "{:<16}-inf", "exact_logp")?;
        writeln!(s, "{:<16}unreachable: no generating path under this item graph and size cap", "note")?;
        return Ok(s);
    }
    let paths = enumerate_paths(model, &set)?;
    let logps: Vec<f64> = paths.iter().map(|(_, lp)| *lp).collect();
    let exact = log_sum_exp(&logps);
    writeln!(s, "{:<16}{}", "paths", paths.len())?;
    writeln!(s, "{:<16}{}", "exact_logp", exact)?;
    if model.kind().is_order_independent() {
        let rec = set_prob_recursion(model, &set)?.ln();
        writeln!(s, "{:<16}{}", "recursion_logp", rec)?;
        writeln!(s, "{:<16}{:e}", "recursion_diff", (rec.exp() - exact.exp()).abs())?;
    } else {
        writeln!(s, "{:<16}n/a (order-dependent model)", "recursion_logp")?;
    }
    let mut residual: f64 = 0.0;
    for (path, lp) in &paths {
        let wp = score_path(model, &set, path)?;
        residual = residual.max((wp.log_weight + wp.proposal_logprob - lp).abs());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let log_w: Vec<f64> = (0..samples)
        .map(|_| sample_posterior_path(model, &set, &mut rng).map(|wp| wp.log_weight))
        .collect::<seqset::Result<_>>()?;
    let top = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let scaled: Vec<f64> = log_w.iter().map(|lw| (lw - top).exp()).collect();
    let mean = scaled.iter().sum::<f64>() / samples as f64;
    let var = if samples > 1 {
        scaled.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / (samples - 1) as f64
    } else {
        0.0
    };
    writeln!(s, "{:<16}{}", "is_logp", top + mean.ln())?;
    // delta method: se(log mean) = se(mean) / mean
    writeln!(s, "{:<16}{}", "is_stderr_log", (var / samples as f64).sqrt() / mean)?;
    writeln!(s, "{:<16}{}", "is_samples", samples)?;
    writeln!(s, "{:<16}{:e}", "max_residual", residual)?;
    Ok(s)
}

pub fn oracle_cmd(args: &OracleArgs) -> Result<()> {
    if args.samples == 0 {
        bail!("--samples must be at least 1");
    }
    let (_, neural) = load_checkpoint(&args.model)?;
    let text = oracle_report(&SetModel::Neural(neural), &args.set, args.samples, args.seed)?;
    print!("{text}");
    Ok(())
}

pub struct PlantPaths {
    pub train: PathBuf,
    pub test: PathBuf,
    pub truth: PathBuf,
}

pub fn plant_paths(prefix: &Path) -> PlantPaths {
    let with = |suffix: &str| {
        let mut s = prefix.as_os_str().to_owned();
        s.push(suffix);
        PathBuf::from(s)
    };
    PlantPaths {
        train: with(".train.txt"),
        test: with(".test.txt"),
        truth: with(".truth.tsv"),
    }
}

pub fn plant_cmd(args: &PlantArgs) -> Result<()> {
    let size_dist = args.size_dist.as_deref().map(read_sizes).transpose()?;
    let bench = plant_benchmark(&PlantConfig {
        n_items: args.items,
        n_train: args.train,
        n_test: args.test,
        seed: args.seed,
        size_dist,
    })?;
    let universe = planted_universe(args.items);
    let paths = plant_paths(&args.out);
    for (path, data) in [(&paths.train, &bench.train), (&paths.test, &bench.test)] {
        let mut w = create(path)?;
        data.write_orders(&universe, &mut w)?;
        w.flush()?;
    }
    let mut w = create(&paths.truth)?;
    write_distribution(&universe, &bench.distribution, &mut w)?;
    w.flush()?;
    drop(w);

    let mut manifest = ManifestBuilder::new("plant", args.seed, args.record_time);
    manifest
        .config("items", args.items)
        .config("train", args.train)
        .config("test", args.test);
    if let Some(path) = &args.size_dist {
        manifest.input(path)?;
    }
    manifest.output(&paths.truth)?.output(&paths.train)?.output(&paths.test)?;
    manifest.write(&paths.truth)?;
    Ok(())
}
