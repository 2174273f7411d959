//! Track assignment: clique extraction on the per-row overlap graph,
//! min-cost bipartite matching of each clique onto free tracks, and a
//! look-ahead commit rule.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use crate::problem::{InstTerm, Problem, WspConfig};

/// Legal tracks for a terminal kind.
pub fn eligible_tracks(it: &InstTerm, wsp: &WspConfig) -> Vec<u8> {
    wsp.tracks_for(it.kind).to_vec()
}

/// Horizontal constraint graph: an edge joins two instTerms of different
/// nets on the same row whose closed x-ranges intersect.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OverlapGraph {
    /// InstTerm ids per row, ascending.
    pub rows: Vec<Vec<u32>>,
    /// Edges `(a, b)` with `a < b`, sorted.
    pub edges: Vec<(u32, u32)>,
}

impl OverlapGraph {
    pub fn has_edge(&self, a: u32, b: u32) -> bool {
        let key = (a.min(b), a.max(b));
        self.edges.binary_search(&key).is_ok()
    }
}

pub fn build_overlap_graph(p: &Problem) -> OverlapGraph {
    let mut rows = vec![Vec::new(); p.wsp.rows as usize];
    for it in &p.instterms {
        rows[it.row as usize].push(it.id);
    }
    let mut edges = Vec::new();
    for ids in &mut rows {
        ids.sort_unstable();
        for (i, &a) in ids.iter().enumerate() {
            let ia = p.instterm(a).expect("row member exists");
            for &b in &ids[i + 1..] {
                let ib = p.instterm(b).expect("row member exists");
                if ia.net_id != ib.net_id && ia.overlaps_x(ib) {
                    edges.push((a.min(b), a.max(b)));
                }
            }
        }
    }
    edges.sort_unstable();
    OverlapGraph { rows, edges }
}

/// Maximum clique among `candidates` (instTerms of one row).
///
/// Cliques of an interval graph are exactly sets sharing a common point, so
/// a left-to-right sweep over interval endpoints finds the point covered by
/// the most distinct nets. Ties go to the smallest such x; within a net the
/// smallest id covering the point is chosen.
pub fn max_clique(candidates: &[&InstTerm]) -> Vec<u32> {
    if candidates.is_empty() {
        return Vec::new();
    }
    // (x, 0 = open, 1 = close, net); opens sort before closes at equal x
    let mut events: Vec<(u32, u8, u32)> = Vec::with_capacity(candidates.len() * 2);
    for it in candidates {
        events.push((it.x1, 0, it.net_id));
        events.push((it.x2, 1, it.net_id));
    }
    events.sort_unstable();
    let mut active: BTreeMap<u32, usize> = BTreeMap::new();
    let (mut best, mut best_x) = (0usize, 0u32);
    for (x, kind, net) in events {
        if kind == 0 {
            *active.entry(net).or_default() += 1;
            if active.len() > best {
                best = active.len();
                best_x = x;
            }
        } else if let Some(c) = active.get_mut(&net) {
            *c -= 1;
            if *c == 0 {
                active.remove(&net);
            }
        }
    }
    let mut per_net: BTreeMap<u32, u32> = BTreeMap::new();
    for it in candidates.iter().filter(|it| it.x1 <= best_x && best_x <= it.x2) {
        per_net
            .entry(it.net_id)
            .and_modify(|id| *id = (*id).min(it.id))
            .or_insert(it.id);
    }
    let mut clique: Vec<u32> = per_net.into_values().collect();
    clique.sort_unstable();
    clique
}

/// Per-slot occupancy and the assignment cost model.
#[derive(Debug, Clone)]
pub struct AssignmentGraph {
    wsp: WspConfig,
    /// Committed `(x1, x2, net)` intervals per `(row, track)` slot.
    occupancy: Vec<Vec<(u32, u32, u32)>>,
}

/// Weight of the small deterministic track-preference term.
const PREFERENCE_WEIGHT: f64 = 0.01;

impl AssignmentGraph {
    pub fn new(wsp: &WspConfig) -> Self {
        let slots = wsp.rows as usize * wsp.tracks_per_row as usize;
        Self { wsp: wsp.clone(), occupancy: vec![Vec::new(); slots] }
    }

    fn slot(&self, row: u32, track: u8) -> usize {
        row as usize * self.wsp.tracks_per_row as usize + (track as usize - 1)
    }

    pub fn occupied(&self, row: u32, track: u8) -> &[(u32, u32, u32)] {
        &self.occupancy[self.slot(row, track)]
    }

    /// Total length of intervals committed to the slot.
    pub fn occupied_length(&self, row: u32, track: u8) -> u32 {
        self.occupied(row, track).iter().map(|(a, b, _)| b - a).sum()
    }

    /// Tracks of the instTerm's row it may still take: eligible and not
    /// intersecting another net's committed interval.
    pub fn candidates(&self, it: &InstTerm) -> Vec<u8> {
        self.wsp
            .tracks_for(it.kind)
            .iter()
            .copied()
            .filter(|&t| {
                self.occupied(it.row, t)
                    .iter()
                    .all(|&(a, b, net)| net == it.net_id || b < it.x1 || it.x2 < a)
            })
            .collect()
    }

    /// `len × (1 + occupied/width) + 0.01 × |track − preferred|`.
    pub fn cost(&self, it: &InstTerm, track: u8) -> f64 {
        let len = it.length() as f64;
        let crowd = self.occupied_length(it.row, track) as f64 / self.wsp.width.max(1) as f64;
        let pref = preferred_track(self.wsp.tracks_for(it.kind));
        len * (1.0 + crowd) + PREFERENCE_WEIGHT * (track as f64 - pref as f64).abs()
    }

    pub fn commit(&mut self, it: &InstTerm, track: u8) {
        let s = self.slot(it.row, track);
        self.occupancy[s].push((it.x1, it.x2, it.net_id));
    }
}

/// Lower median of the eligible set.
pub fn preferred_track(tracks: &[u8]) -> u8 {
    let mut t = tracks.to_vec();
    t.sort_unstable();
    t[(t.len() - 1) / 2]
}

/// Cost of a complete assignment, independent of commit order.
///
/// Because different nets never overlap on a slot, the crowding term of a
/// pair sharing a slot is `len_a × len_b / width` whichever is committed
/// first, so the sum of commit-time costs equals this closed form.
pub fn assignment_cost(p: &Problem, assigned: &BTreeMap<u32, u8>) -> f64 {
    let width = p.wsp.width.max(1) as f64;
    let mut total = 0.0;
    let items: Vec<(&InstTerm, u8)> = assigned
        .iter()
        .map(|(id, t)| (p.instterm(*id).expect("assigned id exists"), *t))
        .collect();
    for (i, (it, t)) in items.iter().enumerate() {
        let pref = preferred_track(p.wsp.tracks_for(it.kind));
        total += it.length() as f64 + PREFERENCE_WEIGHT * (*t as f64 - pref as f64).abs();
        for (jt, u) in &items[i + 1..] {
            if jt.row == it.row && u == t {
                total += it.length() as f64 * jt.length() as f64 / width;
            }
        }
    }
    total
}

/// Matching result for one clique.
#[derive(Debug, Clone, PartialEq)]
pub struct CliqueMatching {
    /// `(instterm id, track, cost)` ascending by id.
    pub matched: Vec<(u32, u8, f64)>,
    pub unmatched: Vec<u32>,
}

/// Minimum-cost matching of clique members onto distinct tracks of their
/// row. Cardinality is maximised first; members without a candidate stay
/// unmatched.
pub fn match_clique(members: &[&InstTerm], graph: &AssignmentGraph) -> CliqueMatching {
    let mut members: Vec<&InstTerm> = members.to_vec();
    members.sort_by_key(|it| it.id);
    let mut tracks: BTreeSet<u8> = BTreeSet::new();
    let cands: Vec<Vec<u8>> = members.iter().map(|it| graph.candidates(it)).collect();
    for c in &cands {
        tracks.extend(c.iter().copied());
    }
    let tracks: Vec<u8> = tracks.into_iter().collect();
    if members.is_empty() {
        return CliqueMatching { matched: vec![], unmatched: vec![] };
    }
    // members x (tracks ++ one "unmatched" column per member)
    const UNMATCHED: f64 = 1e9;
    const FORBIDDEN: f64 = 1e12;
    let n = members.len();
    let m = tracks.len() + n;
    let mut cost = vec![vec![FORBIDDEN; m]; n];
    for (i, it) in members.iter().enumerate() {
        for (j, t) in tracks.iter().enumerate() {
            if cands[i].contains(t) {
                cost[i][j] = graph.cost(it, *t);
            }
        }
        for j in tracks.len()..m {
            cost[i][j] = UNMATCHED;
        }
    }
    let assign = hungarian(&cost);
    let mut matched = Vec::new();
    let mut unmatched = Vec::new();
    for (i, it) in members.iter().enumerate() {
        let j = assign[i];
        if j < tracks.len() && cands[i].contains(&tracks[j]) {
            matched.push((it.id, tracks[j], cost[i][j]));
        } else {
            unmatched.push(it.id);
        }
    }
    CliqueMatching { matched, unmatched }
}

/// Rectangular assignment (rows ≤ columns) minimising total cost.
/// Returns the column of each row. O(n²m) shortest augmenting paths with
/// potentials.
pub fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    let m = cost[0].len();
    assert!(n <= m, "hungarian needs rows <= columns");
    let inf = f64::INFINITY;
    // 1-based arrays, column 0 is the virtual root
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![0; n];
    for j in 1..=m {
        if p[j] != 0 {
            out[p[j] - 1] = j - 1;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackAssignment {
    /// InstTerm id → track (the row is the instTerm's own).
    pub tracks: BTreeMap<u32, u8>,
    /// InstTerms left without a legal track, ascending.
    pub unassigned: Vec<u32>,
    /// Sum of commit-time costs.
    pub total_cost: f64,
    /// Number of loop iterations taken.
    pub iterations: usize,
}

impl TrackAssignment {
    pub fn track_of(&self, id: u32) -> Option<u8> {
        self.tracks.get(&id).copied()
    }

    /// Global y coordinate of an assigned instTerm.
    pub fn y_of(&self, it: &InstTerm, wsp: &WspConfig) -> Option<u32> {
        self.track_of(it.id)
            .map(|t| it.row * wsp.tracks_per_row as u32 + t as u32 - 1)
    }
}

/// Iterative clique / matching / look-ahead assignment.
///
/// Each round extracts the largest clique (over rows, ties to the lower
/// row) among assignable instTerms, matches it, and commits the members
/// whose matched track is their only remaining candidate. When no member is
/// forced, the cheapest matched pair is committed so every round makes
/// progress.
pub fn assign_tracks(p: &Problem) -> TrackAssignment {
    let mut graph = AssignmentGraph::new(&p.wsp);
    let mut pending: BTreeSet<u32> = p.instterms.iter().map(|it| it.id).collect();
    let mut tracks = BTreeMap::new();
    let mut total_cost = 0.0;
    let mut iterations = 0;
    loop {
        let assignable: Vec<&InstTerm> = pending
            .iter()
            .map(|id| p.instterm(*id).expect("pending id exists"))
            .filter(|it| !graph.candidates(it).is_empty())
            .collect();
        if assignable.is_empty() {
            break;
        }
        iterations += 1;
        let mut best: Vec<u32> = Vec::new();
        for row in 0..p.wsp.rows {
            let in_row: Vec<&InstTerm> = assignable.iter().copied().filter(|it| it.row == row).collect();
            let clique = max_clique(&in_row);
            if clique.len() > best.len() {
                best = clique;
            }
        }
        let members: Vec<&InstTerm> = best.iter().map(|id| p.instterm(*id).expect("clique member")).collect();
        let matching = match_clique(&members, &graph);
        let forced: Vec<(u32, u8, f64)> = matching
            .matched
            .iter()
            .copied()
            .filter(|(id, t, _)| graph.candidates(p.instterm(*id).expect("member")) == [*t])
            .collect();
        let commit = if forced.is_empty() {
            let cheapest = matching
                .matched
                .iter()
                .copied()
                .min_by(|a, b| a.2.total_cmp(&b.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)))
                .expect("clique members have candidates");
            vec![cheapest]
        } else {
            forced
        };
        for (id, t, _) in commit {
            let it = p.instterm(id).expect("member");
            // recomputed against current occupancy
            total_cost += graph.cost(it, t);
            graph.commit(it, t);
            tracks.insert(id, t);
            pending.remove(&id);
        }
    }
    TrackAssignment { tracks, unassigned: pending.into_iter().collect(), total_cost, iterations }
}

/// Text dump of the overlap graph and the initial assignment graph.
pub fn dump_graphs(p: &Problem) -> String {
    let og = build_overlap_graph(p);
    let ag = AssignmentGraph::new(&p.wsp);
    let mut s = String::new();
    let _ = writeln!(s, "# overlap graph");
    for it in &p.instterms {
        let _ = writeln!(s, "node {} row={} net={} x=[{},{}] kind={:?}", it.id, it.row, it.net_id, it.x1, it.x2, it.kind);
    }
    for (a, b) in &og.edges {
        let _ = writeln!(s, "edge {a} {b}");
    }
    let _ = writeln!(s, "# assignment graph");
    for it in &p.instterms {
        for t in ag.candidates(it) {
            let _ = writeln!(s, "assign {} row={} track={} cost={:.4}", it.id, it.row, t, ag.cost(it, t));
        }
    }
    s
}

/// Checks the legality invariants of an assignment; returns a description
/// of the first problem found.
pub fn check_assignment(p: &Problem, ta: &TrackAssignment) -> Result<(), String> {
    for (&id, &t) in &ta.tracks {
        let it = p.instterm(id).ok_or(format!("unknown instterm {id}"))?;
        if !p.wsp.tracks_for(it.kind).contains(&t) {
            return Err(format!("instterm {id} ({:?}) on ineligible track {t}", it.kind));
        }
    }
    let og = build_overlap_graph(p);
    for &(a, b) in &og.edges {
        if let (Some(ta_), Some(tb)) = (ta.track_of(a), ta.track_of(b)) {
            if ta_ == tb {
                return Err(format!("conflicting instterms {a} and {b} share track {ta_}"));
            }
        }
    }
    let all: BTreeSet<u32> = p.instterms.iter().map(|it| it.id).collect();
    let covered: BTreeSet<u32> = ta.tracks.keys().copied().chain(ta.unassigned.iter().copied()).collect();
    if all != covered {
        return Err("assignment does not cover every instterm exactly".into());
    }
    Ok(())
}
