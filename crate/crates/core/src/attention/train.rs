//! Rollouts and REINFORCE training with a greedy-rollout baseline.

use diffcore::{AdamState, Scalar, Tape, Tensor};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::infer::greedy_decode;
use super::model::{check_instance, decode, featurize, Decode, Features, ModelDims, PolicyParams};
use crate::decompose::RoutingInstance;
use crate::error::{Error, Result};
use crate::router::order_cost;
use crate::stats::paired_ttest;

/// One decoded routing order with its probability and cost.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout<T> {
    pub order: Vec<usize>,
    pub log_prob: T,
    pub cost: u64,
    /// Per-step probability vectors (only when recorded).
    pub step_probs: Vec<Vec<T>>,
}

fn rollout<T: Scalar>(inst: &RoutingInstance, params: &PolicyParams<T>, mode: Decode<'_>, record: bool) -> Result<Rollout<T>> {
    let feats = featurize::<T>(inst);
    if feats.real().is_empty() {
        return Ok(Rollout { order: vec![], log_prob: T::zero(), cost: order_cost(inst, &[])?, step_probs: vec![] });
    }
    let tape = Tape::new();
    let bound = params.bind(&tape, false);
    let d = decode(&bound, &feats, mode, record)?;
    let cost = order_cost(inst, &d.order)?;
    let log_prob = d.log_prob.item();
    Ok(Rollout { order: d.order, log_prob, cost, step_probs: d.step_probs })
}

/// Greedy decode without a tape; same order and log-probability as
/// decoding greedily on the tape.
pub fn greedy_rollout<T: Scalar>(inst: &RoutingInstance, params: &PolicyParams<T>) -> Result<Rollout<T>> {
    let feats = featurize::<T>(inst);
    if feats.real().is_empty() {
        return Ok(Rollout { order: vec![], log_prob: T::zero(), cost: order_cost(inst, &[])?, step_probs: vec![] });
    }
    let (order, log_prob) = greedy_decode(params, &feats)?;
    let cost = order_cost(inst, &order)?;
    Ok(Rollout { order, log_prob, cost, step_probs: vec![] })
}

pub fn sample_rollout<T: Scalar>(inst: &RoutingInstance, params: &PolicyParams<T>, rng: &mut ChaCha8Rng) -> Result<Rollout<T>> {
    rollout(inst, params, Decode::Sample(rng), false)
}

/// Sampled rollout that also returns every step's probability vector.
pub fn sample_rollout_traced<T: Scalar>(
    inst: &RoutingInstance,
    params: &PolicyParams<T>,
    rng: &mut ChaCha8Rng,
) -> Result<Rollout<T>> {
    rollout(inst, params, Decode::Sample(rng), true)
}

/// Log-probability of a given order under the policy.
pub fn order_log_prob<T: Scalar>(inst: &RoutingInstance, params: &PolicyParams<T>, order: &[usize]) -> Result<T> {
    Ok(rollout(inst, params, Decode::Forced(order), false)?.log_prob)
}

/// Greedy costs over a set, in parallel.
pub fn greedy_costs<T: Scalar>(insts: &[RoutingInstance], params: &PolicyParams<T>) -> Result<Vec<u64>> {
    insts.par_iter().map(|i| greedy_rollout(i, params).map(|r| r.cost)).collect()
}

fn mean(v: &[u64]) -> f64 {
    v.iter().sum::<u64>() as f64 / v.len().max(1) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainHyper {
    pub epochs: usize,
    pub batches: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub alpha: f64,
    pub seed: u64,
    pub dim: usize,
    pub heads: usize,
    pub layers: usize,
    pub ff: usize,
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self {
            epochs: 100,
            batches: 20,
            batch_size: 5,
            lr: 1e-4,
            alpha: 0.05,
            seed: 0,
            dim: 64,
            heads: 8,
            layers: 2,
            ff: 256,
        }
    }
}

impl TrainHyper {
    pub fn dims(&self) -> ModelDims {
        ModelDims { dim: self.dim, heads: self.heads, layers: self.layers, ff: self.ff }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batches == 0 || self.batch_size == 0 {
            return Err(Error::Invalid("epochs, batches and batch size must be positive".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Invalid(format!("learning rate must be finite and non-negative, got {}", self.lr)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Invalid(format!("significance level must lie in (0, 1), got {}", self.alpha)));
        }
        self.dims().validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_mean_cost: f64,
    pub val_mean_cost: f64,
    pub baseline_refreshed: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    /// Parameters of the epoch with the lowest validation cost.
    pub best: PolicyParams<T>,
    pub best_epoch: usize,
    pub best_val_cost: f64,
    pub curve: Vec<EpochRecord>,
}

impl<T> TrainOutcome<T> {
    /// `epoch,train_mean_cost,val_mean_cost,baseline_refreshed` CSV.
    pub fn curve_csv(&self) -> String {
        let mut s = String::from("epoch,train_mean_cost,val_mean_cost,baseline_refreshed\n");
        for r in &self.curve {
            s.push_str(&format!(
                "{},{:.6},{:.6},{}\n",
                r.epoch, r.train_mean_cost, r.val_mean_cost, r.baseline_refreshed as u8
            ));
        }
        s
    }
}

/// Gradient of `advantage · log p(order)` for one sampled rollout.
struct Sampled<T> {
    cost: u64,
    log_prob: T,
    grads: Vec<Vec<T>>,
}

fn sample_with_grad<T: Scalar>(
    inst: &RoutingInstance,
    feats: &Features<T>,
    params: &PolicyParams<T>,
    baseline: &PolicyParams<T>,
    seed: u64,
    weight: T,
) -> Result<Sampled<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tape = Tape::new();
    let (cost, loss, ids, log_prob) = {
        let bound = params.bind(&tape, true);
        let d = decode(&bound, feats, Decode::Sample(&mut rng), false)?;
        let ids: Vec<usize> = bound.vars.iter().map(|v| v.id()).collect();
        let cost = order_cost(inst, &d.order)?;
        let bl = greedy_rollout(inst, baseline)?.cost;
        let adv = T::lit(cost as f64 - bl as f64) * weight;
        (cost, d.log_prob.mul_scalar(adv).id(), ids, d.log_prob.item())
    };
    let g = tape.backward(loss)?;
    let grads = ids
        .iter()
        .zip(&params.tensors)
        .map(|(id, t)| g.wrt(*id).map_or_else(|| vec![T::zero(); t.numel()], <[T]>::to_vec))
        .collect();
    Ok(Sampled { cost, log_prob, grads })
}

/// One REINFORCE update from a batch of instances; returns sampled costs.
pub fn train_batch<T: Scalar>(
    batch: &[&RoutingInstance],
    params: &mut PolicyParams<T>,
    baseline: &PolicyParams<T>,
    adam: &mut AdamState<T>,
    seeds: &[u64],
) -> Result<Vec<u64>> {
    let weight = T::one() / T::lit(batch.len() as f64);
    let results: Vec<Sampled<T>> = {
        let p: &PolicyParams<T> = params;
        batch
            .par_iter()
            .zip(seeds)
            .map(|(inst, seed)| sample_with_grad(inst, &featurize(inst), p, baseline, *seed, weight))
            .collect::<Result<_>>()?
    };
    let mut total: Vec<Vec<T>> = params.tensors.iter().map(|t| vec![T::zero(); t.numel()]).collect();
    for r in &results {
        if !r.log_prob.is_finite() {
            return Err(Error::Diverged(format!("non-finite log-probability {}", r.log_prob)));
        }
        for (acc, g) in total.iter_mut().zip(&r.grads) {
            for (a, b) in acc.iter_mut().zip(g) {
                *a += *b;
            }
        }
    }
    if total.iter().flatten().any(|g| !g.is_finite()) {
        return Err(Error::Diverged("non-finite policy gradient".into()));
    }
    for (t, g) in params.tensors.iter_mut().zip(total) {
        t.grad = Some(g);
    }
    let mut refs: Vec<&mut Tensor<T>> = params.tensors.iter_mut().collect();
    adam.step(&mut refs);
    if params.tensors.iter().any(|t| t.data().iter().any(|v| !v.is_finite())) {
        return Err(Error::Diverged("non-finite parameters after update".into()));
    }
    Ok(results.iter().map(|r| r.cost).collect())
}

/// REINFORCE with a greedy-rollout baseline refreshed by a one-sided
/// paired t-test on validation costs. Returns the best-validation policy.
pub fn reinforce_train<T: Scalar>(
    train: &[RoutingInstance],
    val: &[RoutingInstance],
    hyper: &TrainHyper,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome<T>> {
    hyper.validate()?;
    let first = train.first().ok_or_else(|| Error::Invalid("training set is empty".into()))?;
    if val.len() < 2 {
        return Err(Error::Invalid("validation set needs at least 2 instances".into()));
    }
    let n_max = first.n_max;
    for inst in train.iter().chain(val) {
        check_instance(inst, n_max)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut params = PolicyParams::<T>::init(hyper.dims(), rng.gen())?;
    let mut baseline = params.clone();
    let mut baseline_val = greedy_costs(val, &baseline)?;
    let mut adam = AdamState::new(T::lit(hyper.lr));
    let mut best: Option<(f64, usize, PolicyParams<T>)> = None;
    let mut curve = Vec::with_capacity(hyper.epochs);
    for epoch in 1..=hyper.epochs {
        let mut sampled = Vec::with_capacity(hyper.batches * hyper.batch_size);
        for _ in 0..hyper.batches {
            let batch: Vec<&RoutingInstance> =
                (0..hyper.batch_size).map(|_| &train[rng.gen_range(0..train.len())]).collect();
            let seeds: Vec<u64> = (0..batch.len()).map(|_| rng.gen()).collect();
            sampled.extend(train_batch(&batch, &mut params, &baseline, &mut adam, &seeds)?);
        }
        let val_costs = greedy_costs(val, &params)?;
        let val_mean = mean(&val_costs);
        if best.as_ref().is_none_or(|(c, ..)| val_mean < *c) {
            best = Some((val_mean, epoch, params.clone()));
        }
        let a: Vec<f64> = val_costs.iter().map(|c| *c as f64).collect();
        let b: Vec<f64> = baseline_val.iter().map(|c| *c as f64).collect();
        let refreshed = paired_ttest(&a, &b)? <= hyper.alpha;
        if refreshed {
            baseline = params.clone();
            baseline_val = val_costs;
        }
        let rec = EpochRecord { epoch, train_mean_cost: mean(&sampled), val_mean_cost: val_mean, baseline_refreshed: refreshed };
        on_epoch(&rec);
        curve.push(rec);
    }
    let (best_val_cost, best_epoch, best) = best.expect("at least one epoch");
    Ok(TrainOutcome { best, best_epoch, best_val_cost, curve })
}
