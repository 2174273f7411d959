//! Net decomposition into two-instTerm pairs along a minimum spanning tree
//! of bar-to-bar Manhattan distances, and padding into fixed-size routing
//! instances.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::Problem;
use crate::track::TrackAssignment;

/// An assigned instTerm as a horizontal bar on the global track grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Bar {
    pub id: u32,
    pub net: u32,
    pub x1: u32,
    pub x2: u32,
    /// `row × 7 + track − 1`.
    pub y: u32,
}

/// `max(0, gap in x) + |Δy|`: the minimum Manhattan distance between two bars.
pub fn bar_distance(a: &Bar, b: &Bar) -> u32 {
    let gap = a.x1.max(b.x1).saturating_sub(a.x2.min(b.x2));
    gap + a.y.abs_diff(b.y)
}

/// Node feature layout: `(x_a1, x_a2, y_a, x_b1, x_b2, y_b, net)`.
pub type Feature = [i64; 7];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InstTermPair {
    pub a: u32,
    pub b: u32,
    pub net_id: u32,
    pub feature: Feature,
}

impl InstTermPair {
    fn new(a: &Bar, b: &Bar) -> Self {
        Self {
            a: a.id,
            b: b.id,
            net_id: a.net,
            feature: [a.x1 as i64, a.x2 as i64, a.y as i64, b.x1 as i64, b.x2 as i64, b.y as i64, a.net as i64],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PadStrategy {
    #[default]
    Empty,
    Random,
}

impl std::str::FromStr for PadStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "empty" => Ok(Self::Empty),
            "random" => Ok(Self::Random),
            _ => Err(Error::Invalid(format!("unknown pad strategy {s:?} (expected empty|random)"))),
        }
    }
}

/// Padded set of pairs: the unit both sequencers and the router work on.
#[derive(Debug, Clone, PartialEq)]
pub struct RoutingInstance {
    pub name: String,
    pub width: u32,
    pub height: u32,
    pub max_net: u32,
    /// Assigned instTerms.
    pub bars: Vec<Bar>,
    /// InstTerms the track assigner could not place.
    pub unassigned: usize,
    /// Real pairs; their indices are what orders permute.
    pub pairs: Vec<InstTermPair>,
    pub n_max: usize,
    /// `n_max` feature rows, real pairs first.
    pub nodes: Vec<Feature>,
    pub mask: Vec<bool>,
    pub pad: PadStrategy,
}

impl RoutingInstance {
    pub fn real_len(&self) -> usize {
        self.pairs.len()
    }

    pub fn bar(&self, id: u32) -> Option<&Bar> {
        self.bars.iter().find(|b| b.id == id)
    }

    /// Hand-built instance: `pairs` name bar ids, padding is empty.
    pub fn from_bars(name: &str, width: u32, height: u32, bars: Vec<Bar>, pairs: &[(u32, u32)], n_max: usize) -> Result<Self> {
        if pairs.len() > n_max {
            return Err(Error::NMaxTooSmall { n_max, required: pairs.len() });
        }
        let find = |id: u32| bars.iter().find(|b| b.id == id).ok_or_else(|| Error::Invalid(format!("no bar with id {id}")));
        let pairs = pairs
            .iter()
            .map(|&(a, b)| {
                let (a, b) = (find(a)?, find(b)?);
                if a.net != b.net {
                    return Err(Error::Invalid(format!("bars {} and {} belong to different nets", a.id, b.id)));
                }
                Ok(InstTermPair::new(a, b))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut nodes: Vec<Feature> = pairs.iter().map(|p| p.feature).collect();
        nodes.resize(n_max, [0; 7]);
        let mut mask = vec![true; pairs.len()];
        mask.resize(n_max, false);
        Ok(Self {
            name: name.to_string(),
            width,
            height,
            max_net: bars.iter().map(|b| b.net).max().unwrap_or(0),
            bars,
            unassigned: 0,
            pairs,
            n_max,
            nodes,
            mask,
            pad: PadStrategy::Empty,
        })
    }
}

/// Disjoint-set forest with path halving and union by size.
#[derive(Debug, Clone)]
pub struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        Self { parent: (0..n).collect(), size: vec![1; n] }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Returns false if already joined.
    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
        true
    }
}

/// Kruskal MST over the members of one net. Edges are ordered by
/// `(distance, min id, max id)`; each pair is reported with `a < b`.
pub fn decompose_net(members: &[Bar]) -> Vec<InstTermPair> {
    let mut members = members.to_vec();
    members.sort_by_key(|b| b.id);
    let mut edges = Vec::with_capacity(members.len() * members.len() / 2);
    for i in 0..members.len() {
        for j in i + 1..members.len() {
            edges.push((bar_distance(&members[i], &members[j]), members[i].id, members[j].id, i, j));
        }
    }
    edges.sort_unstable();
    let mut uf = UnionFind::new(members.len());
    let mut out = Vec::with_capacity(members.len().saturating_sub(1));
    for (_, _, _, i, j) in edges {
        if uf.union(i, j) {
            out.push(InstTermPair::new(&members[i], &members[j]));
            if out.len() + 1 == members.len() {
                break;
            }
        }
    }
    out
}

/// Total MST weight helper.
pub fn tree_weight(members: &[Bar], pairs: &[InstTermPair]) -> u32 {
    let get = |id| members.iter().find(|b| b.id == id).expect("pair endpoint is a member");
    pairs.iter().map(|p| bar_distance(get(p.a), get(p.b))).sum()
}

/// Bars for every assigned instTerm of `p`.
pub fn bars_of(p: &Problem, ta: &TrackAssignment) -> Vec<Bar> {
    p.instterms
        .iter()
        .filter_map(|it| {
            ta.y_of(it, &p.wsp)
                .map(|y| Bar { id: it.id, net: it.net_id, x1: it.x1, x2: it.x2, y })
        })
        .collect()
}

/// Number of real pairs `p` decomposes into under `ta`.
pub fn pair_count(p: &Problem, ta: &TrackAssignment) -> usize {
    p.nets
        .iter()
        .map(|n| n.members.iter().filter(|m| ta.track_of(**m).is_some()).count().saturating_sub(1))
        .sum()
}

/// Decomposes every net (ascending net id) and pads to `n_max` rows.
/// Unassigned instTerms are left out of their nets' trees.
pub fn decompose_problem(
    p: &Problem,
    ta: &TrackAssignment,
    n_max: usize,
    pad: PadStrategy,
    seed: u64,
) -> Result<RoutingInstance> {
    let bars = bars_of(p, ta);
    let mut pairs = Vec::new();
    for net in &p.nets {
        let members: Vec<Bar> = bars.iter().copied().filter(|b| b.net == net.net_id).collect();
        pairs.extend(decompose_net(&members));
    }
    if pairs.len() > n_max {
        return Err(Error::NMaxTooSmall { n_max, required: pairs.len() });
    }
    let mut nodes: Vec<Feature> = pairs.iter().map(|p| p.feature).collect();
    let mut mask = vec![true; pairs.len()];
    match pad {
        PadStrategy::Empty => nodes.resize(n_max, [0; 7]),
        PadStrategy::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut lo = [0i64; 7];
            let mut hi = [0i64; 7];
            if !pairs.is_empty() {
                for k in 0..7 {
                    lo[k] = nodes.iter().map(|f| f[k]).min().expect("non-empty");
                    hi[k] = nodes.iter().map(|f| f[k]).max().expect("non-empty");
                }
            }
            while nodes.len() < n_max {
                let mut f = [0i64; 7];
                for k in 0..7 {
                    f[k] = rng.gen_range(lo[k]..=hi[k]);
                }
                nodes.push(f);
            }
        }
    }
    mask.resize(n_max, false);
    Ok(RoutingInstance {
        name: p.name.clone(),
        width: p.wsp.width,
        height: p.wsp.height(),
        max_net: p.max_net_id(),
        bars,
        unassigned: ta.unassigned.len(),
        pairs,
        n_max,
        nodes,
        mask,
        pad,
    })
}

/// CSV dump of the real pairs: `a,b,net,x_a1,x_a2,y_a,x_b1,x_b2,y_b,l`.
pub fn pairs_csv(inst: &RoutingInstance) -> String {
    let mut s = String::from("a,b,net,x_a1,x_a2,y_a,x_b1,x_b2,y_b,l\n");
    for p in &inst.pairs {
        let f = p.feature;
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            p.a, p.b, p.net_id, f[0], f[1], f[2], f[3], f[4], f[5], f[6]
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bar(id: u32, net: u32, x1: u32, x2: u32, y: u32) -> Bar {
        Bar { id, net, x1, x2, y }
    }

    #[test]
    fn distance_cases() {
        assert_eq!(bar_distance(&bar(0, 0, 0, 2, 0), &bar(1, 0, 4, 6, 3)), 5);
        assert_eq!(bar_distance(&bar(0, 0, 0, 4, 0), &bar(1, 0, 2, 6, 3)), 3);
        let a = bar(0, 0, 3, 9, 4);
        assert_eq!(bar_distance(&a, &a), 0);
    }

    #[test]
    fn two_members_one_pair() {
        let pairs = decompose_net(&[bar(3, 1, 0, 1, 0), bar(1, 1, 5, 6, 2)]);
        assert_eq!(pairs.len(), 1);
        assert_eq!((pairs[0].a, pairs[0].b), (1, 3));
    }

    #[test]
    fn collinear_stack_skips_long_edge() {
        let pairs = decompose_net(&[bar(0, 1, 2, 4, 0), bar(1, 1, 2, 4, 1), bar(2, 1, 2, 4, 2)]);
        let ends: Vec<(u32, u32)> = pairs.iter().map(|p| (p.a, p.b)).collect();
        assert_eq!(ends, vec![(0, 1), (1, 2)]);
    }

    #[test]
    fn single_member_has_no_pairs() {
        assert!(decompose_net(&[bar(0, 1, 0, 1, 0)]).is_empty());
    }

    #[test]
    fn union_find_basics() {
        let mut uf = UnionFind::new(4);
        assert!(uf.union(0, 1));
        assert!(uf.union(2, 3));
        assert!(!uf.union(1, 0));
        assert!(uf.union(1, 3));
        assert_eq!(uf.find(0), uf.find(2));
    }

    #[test]
    fn pad_strategy_parses() {
        assert_eq!("empty".parse::<PadStrategy>().unwrap(), PadStrategy::Empty);
        assert_eq!("random".parse::<PadStrategy>().unwrap(), PadStrategy::Random);
        assert!("zero".parse::<PadStrategy>().is_err());
    }
}
