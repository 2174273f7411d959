//! Sequential L/Z pattern routing on a unit-capacity grid.
//!
//! Vertices are integer points `(x, y)` with `0 ≤ x ≤ width` and
//! `0 ≤ y < height`, where `y` is the global track coordinate. Every edge
//! has capacity one; an edge consumed by a net is tagged with that net so
//! later routes of the same net may reuse it.

use serde::{Deserialize, Serialize};

use crate::decompose::{Bar, RoutingInstance};
use crate::error::{Error, Result};

/// Weight of wirelength in the routing cost.
pub const WL_WEIGHT: u64 = 1;
/// Weight of each opening in the routing cost.
pub const OPEN_WEIGHT: u64 = 10;

const FREE: u32 = u32::MAX;

pub type Vertex = (u32, u32);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CapacityGrid {
    width: u32,
    height: u32,
    /// Owner of edge `(x,y)-(x+1,y)` at `y * width + x`.
    horizontal: Vec<u32>,
    /// Owner of edge `(x,y)-(x,y+1)` at `y * (width + 1) + x`.
    vertical: Vec<u32>,
}

impl CapacityGrid {
    pub fn new(width: u32, height: u32) -> Self {
        let (w, h) = (width as usize, height as usize);
        Self {
            width,
            height,
            horizontal: vec![FREE; w * h],
            vertical: vec![FREE; (w + 1) * h.saturating_sub(1)],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    fn slot(&self, a: Vertex, b: Vertex) -> (bool, usize) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        debug_assert_eq!(lo.0.abs_diff(hi.0) + lo.1.abs_diff(hi.1), 1, "edge endpoints must be adjacent");
        if lo.1 == hi.1 {
            (true, (lo.1 * self.width + lo.0) as usize)
        } else {
            (false, (lo.1 * (self.width + 1) + lo.0) as usize)
        }
    }

    /// Net owning the edge between two adjacent vertices, if any.
    pub fn owner(&self, a: Vertex, b: Vertex) -> Option<u32> {
        let (h, i) = self.slot(a, b);
        let o = if h { self.horizontal[i] } else { self.vertical[i] };
        (o != FREE).then_some(o)
    }

    /// Remaining capacity (0 or 1) of the edge.
    pub fn capacity(&self, a: Vertex, b: Vertex) -> u8 {
        u8::from(self.owner(a, b).is_none())
    }

    /// Usable by `net`: free, or already owned by `net`.
    pub fn usable(&self, a: Vertex, b: Vertex, net: u32) -> bool {
        self.owner(a, b).is_none_or(|o| o == net)
    }

    fn claim(&mut self, a: Vertex, b: Vertex, net: u32) {
        let (h, i) = self.slot(a, b);
        let cell = if h { &mut self.horizontal[i] } else { &mut self.vertical[i] };
        debug_assert!(*cell == FREE || *cell == net, "edge already owned by another net");
        *cell = net;
    }

    pub fn in_bounds(&self, v: Vertex) -> bool {
        v.0 <= self.width && v.1 < self.height
    }

    /// Number of consumed edges.
    pub fn used_edges(&self) -> usize {
        self.horizontal.iter().chain(&self.vertical).filter(|o| **o != FREE).count()
    }

    fn segment_usable(&self, from: Vertex, to: Vertex, net: u32) -> bool {
        walk(from, to).windows(2).all(|e| self.usable(e[0], e[1], net))
    }

    pub fn commit(&mut self, path: &Path, net: u32) {
        for e in path.vertices.windows(2) {
            self.claim(e[0], e[1], net);
        }
    }
}

/// Unit-step vertices from `from` to `to` along one axis (inclusive).
fn walk(from: Vertex, to: Vertex) -> Vec<Vertex> {
    debug_assert!(from.0 == to.0 || from.1 == to.1, "walk is axis-aligned");
    let mut out = vec![from];
    let mut v = from;
    while v != to {
        if v.0 != to.0 {
            v.0 = if v.0 < to.0 { v.0 + 1 } else { v.0 - 1 };
        } else {
            v.1 = if v.1 < to.1 { v.1 + 1 } else { v.1 - 1 };
        }
        out.push(v);
    }
    out
}

/// A rectilinear path given as its unit-step vertex list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Path {
    pub vertices: Vec<Vertex>,
}

impl Path {
    /// Path through the given corner points, expanded to unit steps.
    pub fn through(corners: &[Vertex]) -> Self {
        let mut vertices = vec![corners[0]];
        for w in corners.windows(2) {
            vertices.extend(walk(w[0], w[1]).into_iter().skip(1));
        }
        Self { vertices }
    }

    pub fn wirelength(&self) -> u32 {
        self.vertices.len().saturating_sub(1) as u32
    }

    pub fn start(&self) -> Vertex {
        self.vertices[0]
    }

    pub fn end(&self) -> Vertex {
        *self.vertices.last().expect("path has at least one vertex")
    }

    /// Number of direction changes.
    pub fn bends(&self) -> u32 {
        let dirs: Vec<bool> = self.vertices.windows(2).map(|e| e[0].1 == e[1].1).collect();
        dirs.windows(2).filter(|d| d[0] != d[1]).count() as u32
    }

    /// Turning points including both ends.
    pub fn corners(&self) -> Vec<Vertex> {
        let v = &self.vertices;
        let mut out = vec![v[0]];
        for i in 1..v.len().saturating_sub(1) {
            let h_in = v[i - 1].1 == v[i].1;
            let h_out = v[i].1 == v[i + 1].1;
            if h_in != h_out {
                out.push(v[i]);
            }
        }
        if v.len() > 1 {
            out.push(*v.last().expect("non-empty"));
        }
        out
    }

    fn has_repeated_edge(&self) -> bool {
        let mut seen = std::collections::HashSet::new();
        self.vertices.windows(2).any(|e| {
            let k = if e[0] <= e[1] { (e[0], e[1]) } else { (e[1], e[0]) };
            !seen.insert(k)
        })
    }

    /// Consecutive vertices adjacent, no edge repeated, at most two bends.
    pub fn is_well_formed(&self) -> bool {
        !self.vertices.is_empty()
            && self.vertices.windows(2).all(|e| e[0].0.abs_diff(e[1].0) + e[0].1.abs_diff(e[1].1) == 1)
            && !self.has_repeated_edge()
            && self.bends() <= 2
    }
}

fn manhattan(a: Vertex, b: Vertex) -> u32 {
    a.0.abs_diff(b.0) + a.1.abs_diff(b.1)
}

/// Straight or single-bend paths: straight when aligned, otherwise the
/// upper L (corner on the higher track) before the lower L.
pub fn try_l(g: &CapacityGrid, vi: Vertex, vj: Vertex, net: u32) -> Option<Path> {
    if vi.0 == vj.0 || vi.1 == vj.1 {
        return g.segment_usable(vi, vj, net).then(|| Path::through(&[vi, vj]));
    }
    let c1 = (vi.0, vj.1);
    let c2 = (vj.0, vi.1);
    let (upper, lower) = if c1.1 >= c2.1 { (c1, c2) } else { (c2, c1) };
    [upper, lower]
        .into_iter()
        .find(|&c| g.segment_usable(vi, c, net) && g.segment_usable(c, vj, net))
        .map(|c| Path::through(&[vi, c, vj]))
}

/// Interior coordinates strictly between `a` and `b`, nearest to the
/// midpoint first, ties toward the smaller coordinate.
fn midpoint_out(a: u32, b: u32) -> Vec<u32> {
    let (lo, hi) = (a.min(b), a.max(b));
    let mut v: Vec<u32> = (lo + 1..hi).collect();
    let twice_mid = (lo + hi) as i64;
    v.sort_by_key(|&c| ((2 * c as i64 - twice_mid).abs(), c));
    v
}

/// Two-bend paths: horizontal-vertical-horizontal over interior columns,
/// then vertical-horizontal-vertical over interior tracks.
pub fn try_z(g: &CapacityGrid, vi: Vertex, vj: Vertex, net: u32) -> Option<Path> {
    if vi.1 != vj.1 {
        for xm in midpoint_out(vi.0, vj.0) {
            let (c1, c2) = ((xm, vi.1), (xm, vj.1));
            if g.segment_usable(vi, c1, net) && g.segment_usable(c1, c2, net) && g.segment_usable(c2, vj, net) {
                return Some(Path::through(&[vi, c1, c2, vj]));
            }
        }
    }
    if vi.0 != vj.0 {
        for ym in midpoint_out(vi.1, vj.1) {
            let (c1, c2) = ((vi.0, ym), (vj.0, ym));
            if g.segment_usable(vi, c1, net) && g.segment_usable(c1, c2, net) && g.segment_usable(c2, vj, net) {
                return Some(Path::through(&[vi, c1, c2, vj]));
            }
        }
    }
    None
}

/// Drops leading edges that run along bar `a` and trailing edges that run
/// along bar `b`; the result still touches both bars.
pub fn trim_path(path: &Path, a: &Bar, b: &Bar) -> Path {
    let on = |v: Vertex, bar: &Bar| v.1 == bar.y && (bar.x1..=bar.x2).contains(&v.0);
    let v = &path.vertices;
    let mut s = 0;
    while s + 1 < v.len() && on(v[s], a) && on(v[s + 1], a) {
        s += 1;
    }
    let mut e = v.len() - 1;
    while e > s && on(v[e], b) && on(v[e - 1], b) {
        e -= 1;
    }
    Path { vertices: v[s..=e].to_vec() }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum RouteResult {
    Routed { path: Path },
    Open,
}

impl RouteResult {
    pub fn wirelength(&self) -> u32 {
        match self {
            Self::Routed { path } => path.wirelength(),
            Self::Open => 0,
        }
    }

    pub fn is_open(&self) -> bool {
        matches!(self, Self::Open)
    }
}

/// Grid with every bar's own horizontal edges consumed by its net.
pub fn init_grid(inst: &RoutingInstance) -> CapacityGrid {
    grid_with_bars(inst.width, inst.height, &inst.bars)
}

pub fn grid_with_bars(width: u32, height: u32, bars: &[Bar]) -> CapacityGrid {
    let mut g = CapacityGrid::new(width, height);
    for bar in bars {
        for x in bar.x1..bar.x2 {
            g.claim((x, bar.y), (x + 1, bar.y), bar.net);
        }
    }
    g
}

/// Routes one pair: every station of `a` against every station of `b`,
/// L before Z, keeping the candidate with least wirelength, then fewest
/// bends, then lexicographically smallest start and end vertex. The
/// trimmed winner is committed; nothing is committed on failure.
pub fn route_pair(g: &mut CapacityGrid, a: &Bar, b: &Bar) -> RouteResult {
    let mut ends: Vec<(u32, Vertex, Vertex)> = Vec::new();
    for xa in a.x1..=a.x2 {
        for xb in b.x1..=b.x2 {
            let (vi, vj) = ((xa, a.y), (xb, b.y));
            ends.push((manhattan(vi, vj), vi, vj));
        }
    }
    ends.sort_unstable();
    let mut best: Option<(u32, u32, Vertex, Vertex, Path)> = None;
    for (wl, vi, vj) in ends {
        if best.as_ref().is_some_and(|b| wl > b.0) {
            break;
        }
        let Some(path) = try_l(g, vi, vj, a.net).or_else(|| try_z(g, vi, vj, a.net)) else {
            continue;
        };
        let key = (wl, path.bends(), vi, vj);
        if best.as_ref().is_none_or(|b| key < (b.0, b.1, b.2, b.3)) {
            best = Some((key.0, key.1, key.2, key.3, path));
        }
    }
    match best {
        Some((.., path)) => {
            let path = trim_path(&path, a, b);
            g.commit(&path, a.net);
            RouteResult::Routed { path }
        }
        None => RouteResult::Open,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RouteSolution {
    pub order: Vec<usize>,
    /// Indexed by pair index (not by routing step).
    pub results: Vec<RouteResult>,
    pub total_wirelength: u64,
    /// Open pairs plus instTerms the track assigner could not place.
    pub open_count: u64,
    pub cost: u64,
}

impl RouteSolution {
    pub fn routed_count(&self) -> usize {
        self.results.iter().filter(|r| !r.is_open()).count()
    }

    /// `pair_index,status,wirelength` rows followed by a `WL,opens,cost` summary.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("pair_index,status,wirelength\n");
        for (i, r) in self.results.iter().enumerate() {
            let status = if r.is_open() { "open" } else { "routed" };
            s.push_str(&format!("{i},{status},{}\n", r.wirelength()));
        }
        s.push_str(&format!("WL,opens,cost\n{},{},{}\n", self.total_wirelength, self.open_count, self.cost));
        s
    }
}

pub fn routing_cost(wirelength: u64, opens: u64) -> u64 {
    WL_WEIGHT * wirelength + OPEN_WEIGHT * opens
}

/// Checks that `order` is a permutation of `0..n`.
pub fn check_order(order: &[usize], n: usize) -> Result<()> {
    if order.len() != n {
        return Err(Error::InvalidOrder(format!("expected {n} indices, got {}", order.len())));
    }
    let mut seen = vec![false; n];
    for &i in order {
        if i >= n {
            return Err(Error::InvalidOrder(format!("index {i} out of range 0..{n}")));
        }
        if std::mem::replace(&mut seen[i], true) {
            return Err(Error::InvalidOrder(format!("index {i} repeated")));
        }
    }
    Ok(())
}

/// Routes the real pairs of `inst` in `order` on a fresh grid.
pub fn route_sequence(inst: &RoutingInstance, order: &[usize]) -> Result<RouteSolution> {
    check_order(order, inst.pairs.len())?;
    let mut g = init_grid(inst);
    let mut results = vec![RouteResult::Open; inst.pairs.len()];
    for &i in order {
        let p = &inst.pairs[i];
        let (a, b) = match (inst.bar(p.a), inst.bar(p.b)) {
            (Some(a), Some(b)) => (*a, *b),
            _ => return Err(Error::Invalid(format!("pair {i} refers to an unplaced instTerm"))),
        };
        results[i] = route_pair(&mut g, &a, &b);
    }
    let total_wirelength: u64 = results.iter().map(|r| r.wirelength() as u64).sum();
    let open_count = results.iter().filter(|r| r.is_open()).count() as u64 + inst.unassigned as u64;
    Ok(RouteSolution {
        order: order.to_vec(),
        results,
        total_wirelength,
        open_count,
        cost: routing_cost(total_wirelength, open_count),
    })
}

/// Cost only; convenience for sequencers.
pub fn order_cost(inst: &RoutingInstance, order: &[usize]) -> Result<u64> {
    Ok(route_sequence(inst, order)?.cost)
}
