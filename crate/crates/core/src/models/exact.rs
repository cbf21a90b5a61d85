//! Exact likelihoods for small sets: path enumeration, the subset
//! recursion for order-independent models, and full set distributions.

use std::collections::BTreeMap;

use super::{Action, GenState, GeneratingPath, SetModel};
use crate::data::ItemSet;
use crate::error::{Error, Result};
use crate::numerics::kernels::log_sum_exp;

/// Largest set accepted by enumeration and the recursion.
pub const ENUMERATION_CAP: usize = 8;

fn check_cap(set: &ItemSet) -> Result<()> {
    if set.len() > ENUMERATION_CAP {
        return Err(Error::SetTooLarge {
            size: set.len(),
            cap: ENUMERATION_CAP,
        });
    }
    Ok(())
}

/// Every terminated path inducing `set` with its log-probability. Empty
/// when the set cannot be generated.
pub fn enumerate_paths(model: &SetModel, set: &ItemSet) -> Result<Vec<(GeneratingPath, f64)>> {
    check_cap(set)?;
    let mut out = Vec::new();
    if set.max_item() >= model.graph().n_items() {
        return Ok(out);
    }
    let mut items = Vec::with_capacity(set.len());
    walk(model, set, &model.initial_state(), 0.0, &mut items, &mut out)?;
    Ok(out)
}

fn walk(
    model: &SetModel,
    set: &ItemSet,
    state: &GenState,
    logp: f64,
    items: &mut Vec<usize>,
    out: &mut Vec<(GeneratingPath, f64)>,
) -> Result<()> {
    let lps = model.action_logprobs(state)?;
    if items.len() == set.len() {
        if let Some(&(_, lp)) = lps.iter().find(|(a, _)| *a == Action::Stop) {
            out.push((GeneratingPath::terminated(items.clone()), logp + lp));
        }
        return Ok(());
    }
    for (action, lp) in lps {
        if let Action::Add(i) = action {
            if set.contains(i) && !items.contains(&i) {
                let next = model.advance(state, i)?;
                items.push(i);
                walk(model, set, &next, logp + lp, items, out)?;
                items.pop();
            }
        }
    }
    Ok(())
}

/// `log p(S)` as the log-sum-exp over all generating paths; `-inf` when
/// the set is unreachable.
pub fn set_logprob_exact(model: &SetModel, set: &ItemSet) -> Result<f64> {
    let lps: Vec<f64> = enumerate_paths(model, set)?.into_iter().map(|(_, lp)| lp).collect();
    Ok(log_sum_exp(&lps))
}

/// `p(S) = p(stop | S) * g(S)` with `g(S) = sum_x p(x | S - x) g(S - x)` and
/// `g(empty) = 1`, memoized over the subsets of `S`. Only valid when action
/// probabilities depend on the state through its set alone.
pub fn set_prob_recursion(model: &SetModel, set: &ItemSet) -> Result<f64> {
    if !model.kind().is_order_independent() {
        return Err(Error::OrderDependentModel(model.kind().as_str()));
    }
    check_cap(set)?;
    if set.max_item() >= model.graph().n_items() {
        return Ok(0.0);
    }
    let mut memo = Recursion {
        model,
        items: set.items(),
        gamma: vec![None; 1 << set.len()],
        probs: vec![None; 1 << set.len()],
    };
    let full = (1usize << set.len()) - 1;
    let g = memo.gamma(full)?;
    if g == 0.0 {
        return Ok(0.0);
    }
    Ok(memo.action_prob(full, Action::Stop)? * g)
}

struct Recursion<'a> {
    model: &'a SetModel,
    items: &'a [usize],
    gamma: Vec<Option<f64>>,
    probs: Vec<Option<Vec<(Action, f64)>>>,
}

impl Recursion<'_> {
    fn gamma(&mut self, local: usize) -> Result<f64> {
        if local == 0 {
            return Ok(1.0);
        }
        if let Some(g) = self.gamma[local] {
            return Ok(g);
        }
        let mut g = 0.0;
        for k in 0..self.items.len() {
            if local >> k & 1 == 1 {
                let rest = local & !(1 << k);
                let sub = self.gamma(rest)?;
                if sub > 0.0 {
                    g += self.action_prob(rest, Action::Add(self.items[k]))? * sub;
                }
            }
        }
        self.gamma[local] = Some(g);
        Ok(g)
    }

    /// Probability of `action` at the state holding the local subset;
    /// zero when the action is not a candidate there.
    fn action_prob(&mut self, local: usize, action: Action) -> Result<f64> {
        if self.probs[local].is_none() {
            let mut state = self.model.initial_state();
            for (k, &item) in self.items.iter().enumerate() {
                if local >> k & 1 == 1 {
                    state = self.model.advance(&state, item)?;
                }
            }
            let lps = self
                .model
                .action_logprobs(&state)?
                .into_iter()
                .map(|(a, lp)| (a, lp.exp()))
                .collect();
            self.probs[local] = Some(lps);
        }
        let row = self.probs[local].as_ref().expect("filled above");
        Ok(row.iter().find(|(a, _)| *a == action).map_or(0.0, |&(_, p)| p))
    }
}

/// The full distribution over non-empty subsets of the universe, keyed by
/// set, holding only positive probabilities. Order-independent models use
/// a forward pass over states; the others enumerate paths per subset.
pub fn exact_set_distribution(model: &SetModel) -> Result<BTreeMap<ItemSet, f64>> {
    let n = model.graph().n_items();
    if n > 20 {
        return Err(Error::SetTooLarge { size: n, cap: 20 });
    }
    let mut out = BTreeMap::new();
    if model.kind().is_order_independent() {
        // reach[mask] = probability that generation passes through mask.
        let mut reach = vec![0.0f64; 1 << n];
        reach[0] = 1.0;
        let mut masks: Vec<usize> = (0..1usize << n).collect();
        masks.sort_by_key(|m| m.count_ones());
        for mask in masks {
            let r = reach[mask];
            if r == 0.0 {
                continue;
            }
            let mut state = model.initial_state();
            for i in 0..n {
                if mask >> i & 1 == 1 {
                    state = model.advance(&state, i)?;
                }
            }
            for (action, lp) in model.action_logprobs(&state)? {
                let p = lp.exp();
                match action {
                    Action::Add(i) => reach[mask | 1 << i] += r * p,
                    Action::Stop => {
                        if r * p > 0.0 {
                            out.insert(ItemSet::from_mask(mask as u64)?, r * p);
                        }
                    }
                }
            }
        }
    } else {
        if n > ENUMERATION_CAP {
            return Err(Error::SetTooLarge {
                size: n,
                cap: ENUMERATION_CAP,
            });
        }
        for mask in 1..1u64 << n {
            let set = ItemSet::from_mask(mask)?;
            let p = set_logprob_exact(model, &set)?.exp();
            if p > 0.0 {
                out.insert(set, p);
            }
        }
    }
    Ok(out)
}
