//! Reference sequencers: uniform random orders and exhaustive search.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::decompose::RoutingInstance;
use crate::error::{Error, Result};
use crate::router::order_cost;

/// Largest pair count the exhaustive sequencer accepts (8! = 40,320 orders).
pub const ORACLE_MAX_PAIRS: usize = 8;

pub fn random_order(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut o: Vec<usize> = (0..n).collect();
    o.shuffle(rng);
    o
}

/// One uniform random order drawn from `seed`.
pub fn seeded_random_order(n: usize, seed: u64) -> Vec<usize> {
    random_order(n, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Costs of `samples` uniform random orders drawn from one seeded stream.
pub fn random_costs(inst: &RoutingInstance, samples: usize, seed: u64) -> Result<Vec<u64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..samples)
        .map(|_| order_cost(inst, &random_order(inst.pairs.len(), &mut rng)))
        .collect()
}

pub fn random_mean_cost(inst: &RoutingInstance, samples: usize, seed: u64) -> Result<f64> {
    let costs = random_costs(inst, samples, seed)?;
    Ok(costs.iter().sum::<u64>() as f64 / samples.max(1) as f64)
}

/// Rearranges `v` into its lexicographic successor; false at the last one.
pub fn next_permutation(v: &mut [usize]) -> bool {
    if v.len() < 2 {
        return false;
    }
    let Some(i) = (0..v.len() - 1).rev().find(|&i| v[i] < v[i + 1]) else {
        return false;
    };
    let j = (i + 1..v.len()).rev().find(|&j| v[j] > v[i]).expect("successor exists");
    v.swap(i, j);
    v[i + 1..].reverse();
    true
}

/// Lexicographically first order of minimum cost over all permutations.
pub fn oracle_sequence(inst: &RoutingInstance) -> Result<(Vec<usize>, u64)> {
    let n = inst.pairs.len();
    if n > ORACLE_MAX_PAIRS {
        return Err(Error::Invalid(format!(
            "exhaustive sequencing refuses {n} pairs (limit {ORACLE_MAX_PAIRS})"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut best = (order.clone(), order_cost(inst, &order)?);
    while next_permutation(&mut order) {
        let c = order_cost(inst, &order)?;
        if c < best.1 {
            best = (order.clone(), c);
        }
    }
    Ok(best)
}
