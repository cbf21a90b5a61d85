//! Importance sampling over generating paths and the training loop.
//!
//! For an observed set `S`, a path is drawn by restricting every step to
//! the valid actions (items of `S` not yet added that are candidates, or
//! stop once everything is added) and renormalizing the model's
//! probabilities over them. The weight of a path is the product of the
//! valid mass at each step, so `r(l) * q(l) = p(l)` holds exactly and the
//! mean weight is an unbiased estimate of `p(S)`.

use std::ops::ControlFlow;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{induced_subgraph_connected, ItemSet, SetMultiset};
use crate::error::{Error, Result};
use crate::models::{sample_action, Action, GenState, GeneratingPath, NeuralModel, SetModel};
use crate::numerics::kernels::log_sum_exp;
use crate::numerics::{Gradients, RmsPropState};

/// A sampled path with its proposal log-probability and log weight.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedPath {
    pub path: GeneratingPath,
    pub proposal_logprob: f64,
    pub log_weight: f64,
}

/// Candidate actions that keep the path inside `target`.
pub fn valid_actions(model: &SetModel, state: &GenState, target: &ItemSet) -> Vec<Action> {
    let complete = state.matches(target);
    model
        .candidate_items(state)
        .into_iter()
        .filter(|a| match a {
            Action::Add(i) => target.contains(*i) && !state.contains(*i),
            Action::Stop => complete,
        })
        .collect()
}

/// True when some path of `model` can induce `target`.
pub fn is_reachable(model: &SetModel, target: &ItemSet) -> bool {
    target.max_item() < model.graph().n_items()
        && target.len() <= model.max_size()
        && induced_subgraph_connected(model.graph(), target)
}

/// Valid actions at `state` with their model log-probabilities, plus the
/// log of their total mass.
fn valid_logprobs(model: &SetModel, state: &GenState, target: &ItemSet) -> Result<(Vec<(Action, f64)>, f64)> {
    let complete = state.matches(target);
    let valid: Vec<(Action, f64)> = model
        .action_logprobs(state)?
        .into_iter()
        .filter(|(a, _)| match a {
            Action::Add(i) => target.contains(*i) && !state.contains(*i),
            Action::Stop => complete,
        })
        .collect();
    let lps: Vec<f64> = valid.iter().map(|(_, lp)| *lp).collect();
    let mass = log_sum_exp(&lps);
    if mass == f64::NEG_INFINITY {
        return Err(Error::Unreachable);
    }
    Ok((valid, mass))
}

/// Draws one path inducing `target` from the restricted proposal.
pub fn sample_posterior_path<R: Rng + ?Sized>(model: &SetModel, target: &ItemSet, rng: &mut R) -> Result<WeightedPath> {
    if !is_reachable(model, target) {
        return Err(Error::Unreachable);
    }
    let mut state = model.initial_state();
    let mut items = Vec::with_capacity(target.len());
    let mut proposal_logprob = 0.0;
    let mut log_weight = 0.0;
    loop {
        let (valid, mass) = valid_logprobs(model, &state, target)?;
        let conditional: Vec<(Action, f64)> = valid.iter().map(|&(a, lp)| (a, lp - mass)).collect();
        let action = sample_action(&conditional, rng)?;
        let lp = conditional
            .iter()
            .find(|(a, _)| *a == action)
            .map(|(_, lp)| *lp)
            .expect("sampled from this list");
        proposal_logprob += lp;
        log_weight += mass;
        match action {
            Action::Stop => break,
            Action::Add(i) => {
                state = model.advance(&state, i)?;
                items.push(i);
            }
        }
    }
    Ok(WeightedPath {
        path: GeneratingPath::terminated(items),
        proposal_logprob,
        log_weight,
    })
}

/// Proposal log-probability and log weight of a given path for `target`.
pub fn score_path(model: &SetModel, target: &ItemSet, path: &GeneratingPath) -> Result<WeightedPath> {
    let mut state = model.initial_state();
    let mut proposal_logprob = 0.0;
    let mut log_weight = 0.0;
    for (step, action) in path.actions().enumerate() {
        let (valid, mass) = valid_logprobs(model, &state, target)?;
        let lp = valid
            .iter()
            .find(|(a, _)| *a == action)
            .map(|(_, lp)| *lp)
            .ok_or_else(|| Error::InvalidPath {
                step,
                reason: format!("{action} is not valid for the target"),
            })?;
        proposal_logprob += lp - mass;
        log_weight += mass;
        if let Action::Add(i) = action {
            state = model.advance(&state, i)?;
        }
    }
    if !path.terminated || !state.matches(target) {
        return Err(Error::InvalidPath {
            step: path.items.len(),
            reason: "path does not induce the target".into(),
        });
    }
    Ok(WeightedPath {
        path: path.clone(),
        proposal_logprob,
        log_weight,
    })
}

fn neural(model: &SetModel) -> Result<&NeuralModel> {
    match model {
        SetModel::Neural(m) => Ok(m),
        SetModel::Tabular(_) => Err(Error::Config("tabular models are not trainable".into())),
    }
}

/// Adds `scale * sum_i w_i grad log p(path_i)` with `w_i` the normalized
/// weights `exp(log_w_i) / sum_j exp(log_w_j)`.
pub fn weighted_path_gradient(
    model: &SetModel,
    paths: &[(GeneratingPath, f64)],
    scale: f64,
    grads: &mut Gradients,
) -> Result<()> {
    let nm = neural(model)?;
    let logs: Vec<f64> = paths.iter().map(|(_, lw)| *lw).collect();
    let total = log_sum_exp(&logs);
    if total == f64::NEG_INFINITY {
        return Err(Error::Unreachable);
    }
    for (path, lw) in paths {
        let w = (lw - total).exp();
        if w > 0.0 {
            nm.accumulate_path_gradient(path, scale * w, grads)?;
        }
    }
    Ok(())
}

/// Self-normalized importance-sampling estimate of `grad log p(target)`
/// from `m` sampled paths, added into `grads` times `scale`. Returns the
/// log of the mean weight, an estimate of `log p(target)`.
pub fn grad_log_set_prob<R: Rng + ?Sized>(
    model: &SetModel,
    target: &ItemSet,
    m: usize,
    rng: &mut R,
    scale: f64,
    grads: &mut Gradients,
) -> Result<f64> {
    if m == 0 {
        return Err(Error::Config("at least one sample per set is required".into()));
    }
    let mut paths = Vec::with_capacity(m);
    for _ in 0..m {
        let wp = sample_posterior_path(model, target, rng)?;
        paths.push((wp.path, wp.log_weight));
    }
    weighted_path_gradient(model, &paths, scale, grads)?;
    let logs: Vec<f64> = paths.iter().map(|(_, lw)| *lw).collect();
    Ok(log_sum_exp(&logs) - (m as f64).ln())
}

/// Exact `grad log p(target)` by weighting every path by its probability.
pub fn exact_grad_log_set_prob(model: &SetModel, target: &ItemSet, scale: f64, grads: &mut Gradients) -> Result<f64> {
    let paths = crate::models::enumerate_paths(model, target)?;
    weighted_path_gradient(model, &paths, scale, grads)?;
    let logs: Vec<f64> = paths.iter().map(|(_, lp)| *lp).collect();
    Ok(log_sum_exp(&logs))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Paths sampled per set (M).
    pub samples_per_set: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Threads computing per-set gradients within a batch.
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            samples_per_set: 5,
            batch_size: 64,
            epochs: 10,
            learning_rate: 0.01,
            seed: 0,
            workers: 1,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.samples_per_set == 0 {
            return Err(Error::Config("samples_per_set must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochReport {
    /// 1-based epoch index.
    pub epoch: usize,
    /// Mean over reachable sets of `-log((1/M) sum_i r_i)`.
    pub nll: f64,
    pub skipped: usize,
    pub wall_time_secs: f64,
}

/// Mixes a seed with two counters into an independent stream seed.
pub fn derive_seed(seed: u64, a: u64, b: u64) -> u64 {
    fn splitmix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    splitmix(splitmix(splitmix(seed) ^ a) ^ b)
}

/// Trains a neural model by stochastic gradient descent on the estimated
/// negative log-likelihood. Unreachable sets are skipped. `observer` sees
/// every epoch report together with the updated model and may stop
/// training early.
pub fn train<F>(model: &mut SetModel, data: &SetMultiset, cfg: &TrainConfig, mut observer: F) -> Result<Vec<EpochReport>>
where
    F: FnMut(&EpochReport, &SetModel) -> ControlFlow<()>,
{
    cfg.validate()?;
    neural(model)?;
    let (mut instances, unreachable): (Vec<ItemSet>, Vec<ItemSet>) =
        data.expand().into_iter().partition(|s| is_reachable(model, s));
    let skipped = unreachable.len();
    if instances.is_empty() {
        return Err(Error::NoTrainableData);
    }
    let mut optimizer = RmsPropState::new(cfg.learning_rate);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut reports = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        instances.shuffle(&mut shuffle_rng);
        let mut nll_sum = 0.0;
        for (b, batch) in instances.chunks(cfg.batch_size).enumerate() {
            let scale = -1.0 / batch.len() as f64;
            let offset = (b * cfg.batch_size) as u64;
            let shared: &SetModel = model;
            let (grads, nll) = batch_gradient(shared, batch, cfg, epoch as u64, offset, scale)?;
            nll_sum += nll;
            let SetModel::Neural(nm) = model else {
                unreachable!("checked above")
            };
            nm.store_mut().accumulate(&grads);
            optimizer.step(nm.store_mut());
        }
        let report = EpochReport {
            epoch,
            nll: nll_sum / instances.len() as f64,
            skipped,
            wall_time_secs: started.elapsed().as_secs_f64(),
        };
        if !report.nll.is_finite() {
            return Err(Error::NonFiniteLoss(report.nll));
        }
        let flow = observer(&report, model);
        reports.push(report);
        if flow.is_break() {
            break;
        }
    }
    Ok(reports)
}

/// Sums per-set gradients for one batch. With several workers the batch is
/// split into contiguous chunks whose buffers are merged in chunk order.
fn batch_gradient(
    model: &SetModel,
    batch: &[ItemSet],
    cfg: &TrainConfig,
    epoch: u64,
    offset: u64,
    scale: f64,
) -> Result<(Gradients, f64)> {
    let nm = neural(model)?;
    let run = |start: usize, sets: &[ItemSet]| -> Result<(Gradients, f64)> {
        let mut grads = Gradients::zeros_like(nm.store());
        let mut nll = 0.0;
        for (k, set) in sets.iter().enumerate() {
            let stream = derive_seed(cfg.seed, epoch, offset + (start + k) as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(stream);
            nll -= grad_log_set_prob(model, set, cfg.samples_per_set, &mut rng, scale, &mut grads)?;
        }
        Ok((grads, nll))
    };
    if cfg.workers == 1 || batch.len() == 1 {
        return run(0, batch);
    }
    let chunk = batch.len().div_ceil(cfg.workers);
    let parts: Vec<Result<(Gradients, f64)>> = std::thread::scope(|scope| {
        let handles: Vec<_> = batch
            .chunks(chunk)
            .enumerate()
            .map(|(w, sets)| scope.spawn(move || run(w * chunk, sets)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("gradient worker panicked"))
            .collect()
    });
    let mut total = Gradients::zeros_like(nm.store());
    let mut nll = 0.0;
    for part in parts {
        let (g, l) = part?;
        total.add_scaled(&g, 1.0);
        nll += l;
    }
    Ok((total, nll))
}
