//! Genetic-algorithm sequencer over routing orders.
//!
//! Each generation is ranked by cost, the top `elites` are kept as parents,
//! and a full new population is bred from them by partially matched
//! crossover followed by swap mutation. The population is replaced
//! wholesale every generation, so the best order ever seen is tracked
//! outside it.
//!
//! All random draws come from one seeded stream, consumed serially;
//! only fitness evaluation runs in parallel.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decompose::RoutingInstance;
use crate::error::{Error, Result};
use crate::router::{order_cost, route_sequence};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GaParams {
    pub generations: usize,
    pub population: usize,
    pub elites: usize,
    pub mutations: usize,
    pub seed: u64,
}

impl Default for GaParams {
    fn default() -> Self {
        Self { generations: 10, population: 10, elites: 4, mutations: 1, seed: 0 }
    }
}

impl GaParams {
    pub fn validate(&self) -> Result<()> {
        if self.generations == 0 || self.population == 0 || self.elites == 0 {
            return Err(Error::Invalid("GA generations, population and elites must be positive".into()));
        }
        if self.elites > self.population {
            return Err(Error::Invalid(format!(
                "GA elites ({}) exceed population ({})",
                self.elites, self.population
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GaResult {
    pub order: Vec<usize>,
    pub cost: u64,
    /// Best-ever cost after each generation.
    pub history: Vec<u64>,
    /// Distinct orders actually routed.
    pub evaluations: usize,
}

impl GaResult {
    /// `generation,best_cost` CSV.
    pub fn history_csv(&self) -> String {
        let mut s = String::from("generation,best_cost\n");
        for (g, c) in self.history.iter().enumerate() {
            s.push_str(&format!("{g},{c}\n"));
        }
        s
    }
}

/// Negated routing cost of `order`.
pub fn fitness(inst: &RoutingInstance, order: &[usize]) -> Result<i64> {
    Ok(-(order_cost(inst, order)? as i64))
}

/// Partially matched crossover with segment `[i, j)` taken from `pa`.
/// Remaining positions take `pb`'s gene, following the segment's
/// mapping chain while that gene is already in the segment.
pub fn pmx_with_cuts(pa: &[usize], pb: &[usize], i: usize, j: usize) -> Vec<usize> {
    let n = pa.len();
    assert_eq!(n, pb.len(), "parents must have equal length");
    assert!(i <= j && j <= n, "cut points out of range");
    let mut pos_in_pa = vec![0; n];
    for (k, &g) in pa.iter().enumerate() {
        pos_in_pa[g] = k;
    }
    let in_segment = |g: usize| (i..j).contains(&pos_in_pa[g]);
    let mut child = pa.to_vec();
    for k in (0..i).chain(j..n) {
        let mut g = pb[k];
        while in_segment(g) {
            g = pb[pos_in_pa[g]];
        }
        child[k] = g;
    }
    child
}

/// Draws two distinct cut points `i < j` from `0..=n`.
pub fn draw_cuts<R: Rng>(n: usize, rng: &mut R) -> (usize, usize) {
    if n == 0 {
        return (0, 0);
    }
    let a = rng.gen_range(0..=n);
    let mut b = rng.gen_range(0..n);
    if b >= a {
        b += 1;
    }
    (a.min(b), a.max(b))
}

pub fn pmx_crossover<R: Rng>(pa: &[usize], pb: &[usize], rng: &mut R) -> Vec<usize> {
    let (i, j) = draw_cuts(pa.len(), rng);
    pmx_with_cuts(pa, pb, i, j)
}

/// `count` independent uniform position-pair swaps; no-op below length 2.
pub fn swap_mutation<R: Rng>(c: &mut [usize], rng: &mut R, count: usize) {
    if c.len() < 2 {
        return;
    }
    for _ in 0..count {
        let a = rng.gen_range(0..c.len());
        let mut b = rng.gen_range(0..c.len() - 1);
        if b >= a {
            b += 1;
        }
        c.swap(a, b);
    }
}

fn evaluate(inst: &RoutingInstance, pop: &[Vec<usize>], memo: &mut HashMap<Vec<usize>, u64>) -> Result<Vec<u64>> {
    let mut fresh: Vec<&Vec<usize>> = pop.iter().filter(|c| !memo.contains_key(*c)).collect();
    fresh.sort();
    fresh.dedup();
    let costs: Vec<Result<u64>> = fresh.par_iter().map(|c| order_cost(inst, c)).collect();
    for (c, cost) in fresh.into_iter().zip(costs) {
        memo.insert(c.clone(), cost?);
    }
    Ok(pop.iter().map(|c| memo[c]).collect())
}

pub fn ga_sequence(inst: &RoutingInstance, params: &GaParams) -> Result<GaResult> {
    params.validate()?;
    let n = inst.pairs.len();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut pop: Vec<Vec<usize>> = (0..params.population)
        .map(|_| {
            let mut o: Vec<usize> = (0..n).collect();
            o.shuffle(&mut rng);
            o
        })
        .collect();
    let mut memo = HashMap::new();
    let mut best: Option<(u64, Vec<usize>)> = None;
    let mut history = Vec::with_capacity(params.generations);
    for gen in 0..params.generations {
        let costs = evaluate(inst, &pop, &mut memo)?;
        let mut rank: Vec<usize> = (0..pop.len()).collect();
        rank.sort_by(|&a, &b| costs[a].cmp(&costs[b]).then_with(|| pop[a].cmp(&pop[b])));
        let top = rank[0];
        if best.as_ref().is_none_or(|(c, o)| (costs[top], &pop[top]) < (*c, o)) {
            best = Some((costs[top], pop[top].clone()));
        }
        history.push(best.as_ref().expect("set above").0);
        if gen + 1 == params.generations {
            break;
        }
        let elites: Vec<&Vec<usize>> = rank[..params.elites].iter().map(|&k| &pop[k]).collect();
        let mut next = Vec::with_capacity(params.population);
        for _ in 0..params.population {
            let (ea, eb) = if elites.len() >= 2 {
                let a = rng.gen_range(0..elites.len());
                let mut b = rng.gen_range(0..elites.len() - 1);
                if b >= a {
                    b += 1;
                }
                (a, b)
            } else {
                (0, 0)
            };
            let mut child = pmx_crossover(elites[ea], elites[eb], &mut rng);
            swap_mutation(&mut child, &mut rng, params.mutations);
            next.push(child);
        }
        pop = next;
    }
    let (cost, order) = best.expect("at least one generation");
    debug_assert_eq!(cost, route_sequence(inst, &order)?.cost);
    Ok(GaResult { order, cost, history, evaluations: memo.len() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn is_perm(v: &[usize]) -> bool {
        let mut s = v.to_vec();
        s.sort_unstable();
        s.iter().enumerate().all(|(i, &x)| i == x)
    }

    #[test]
    fn pmx_hand_trace() {
        // values 1..5 shifted to 0..4
        let pa = [0, 1, 2, 3, 4];
        let pb = [2, 3, 4, 0, 1];
        let child: Vec<usize> = pmx_with_cuts(&pa, &pb, 1, 3).iter().map(|g| g + 1).collect();
        assert_eq!(child, vec![5, 2, 3, 1, 4]);
    }

    #[test]
    fn pmx_identical_parents() {
        let p = [3, 1, 0, 2];
        for i in 0..=4 {
            for j in i..=4 {
                assert_eq!(pmx_with_cuts(&p, &p, i, j), p.to_vec());
            }
        }
    }

    #[test]
    fn swap_examples() {
        let mut c = vec![1, 2, 3];
        c.swap(0, 2);
        assert_eq!(c, vec![3, 2, 1]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut d = vec![0, 1, 2, 3];
        swap_mutation(&mut d, &mut rng, 0);
        assert_eq!(d, vec![0, 1, 2, 3]);
        let mut e = vec![0];
        swap_mutation(&mut e, &mut rng, 5);
        assert_eq!(e, vec![0]);
    }

    #[test]
    fn cuts_are_distinct_and_ordered() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..500 {
            let (i, j) = draw_cuts(5, &mut rng);
            assert!(i < j && j <= 5);
        }
        assert_eq!(draw_cuts(1, &mut rng), (0, 1));
    }

    #[test]
    fn operators_preserve_permutations() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in 1..10 {
            for _ in 0..50 {
                let mut a: Vec<usize> = (0..n).collect();
                let mut b = a.clone();
                a.shuffle(&mut rng);
                b.shuffle(&mut rng);
                let mut c = pmx_crossover(&a, &b, &mut rng);
                assert!(is_perm(&c));
                swap_mutation(&mut c, &mut rng, 3);
                assert!(is_perm(&c));
            }
        }
    }

    #[test]
    fn params_validation() {
        assert!(GaParams::default().validate().is_ok());
        assert!(GaParams { elites: 11, ..GaParams::default() }.validate().is_err());
        assert!(GaParams { generations: 0, ..GaParams::default() }.validate().is_err());
    }
}
