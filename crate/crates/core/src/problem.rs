//! Problem domain: rows of WSP tracks and the instTerms placed on them.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of tracks in every WSP row.
pub const TRACKS_PER_ROW: u8 = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Kind {
    /// Gate terminal.
    G,
    /// Source/drain terminal.
    SD,
    /// Terminal made of both gate and source/drain.
    GSD,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstTerm {
    pub id: u32,
    pub net_id: u32,
    pub kind: Kind,
    pub x1: u32,
    pub x2: u32,
    pub row: u32,
    /// 1-based track within the row, set once assigned.
    pub track: Option<u8>,
}

impl InstTerm {
    pub fn length(&self) -> u32 {
        self.x2 - self.x1
    }

    /// Closed x-ranges intersect.
    pub fn overlaps_x(&self, other: &InstTerm) -> bool {
        self.x1 <= other.x2 && other.x1 <= self.x2
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Net {
    pub net_id: u32,
    /// Member instTerm ids, ascending.
    pub members: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WspConfig {
    pub rows: u32,
    pub tracks_per_row: u8,
    pub width: u32,
    pub g_tracks: Vec<u8>,
    pub sd_tracks: Vec<u8>,
    pub gsd_tracks: Vec<u8>,
}

impl WspConfig {
    /// Seven-track rows: gates on 1, 2, 6, 7; source/drain on 2..=6.
    pub fn new(rows: u32, width: u32) -> Self {
        let g_tracks = vec![1, 2, 6, 7];
        let sd_tracks = vec![2, 3, 4, 5, 6];
        let gsd_tracks = g_tracks.iter().copied().filter(|t| sd_tracks.contains(t)).collect();
        Self { rows, tracks_per_row: TRACKS_PER_ROW, width, g_tracks, sd_tracks, gsd_tracks }
    }

    pub fn tracks_for(&self, kind: Kind) -> &[u8] {
        match kind {
            Kind::G => &self.g_tracks,
            Kind::SD => &self.sd_tracks,
            Kind::GSD => &self.gsd_tracks,
        }
    }

    /// Number of global horizontal tracks (grid height).
    pub fn height(&self) -> u32 {
        self.rows * self.tracks_per_row as u32
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Problem {
    pub name: String,
    pub wsp: WspConfig,
    pub instterms: Vec<InstTerm>,
    pub nets: Vec<Net>,
}

impl Problem {
    /// Builds a problem, sorting instTerms by id and deriving nets.
    pub fn new(name: impl Into<String>, wsp: WspConfig, mut instterms: Vec<InstTerm>) -> Self {
        instterms.sort_by_key(|it| it.id);
        let nets = derive_nets(&instterms);
        Self { name: name.into(), wsp, instterms, nets }
    }

    pub fn instterm(&self, id: u32) -> Option<&InstTerm> {
        self.instterms
            .binary_search_by_key(&id, |it| it.id)
            .ok()
            .map(|i| &self.instterms[i])
            .or_else(|| self.instterms.iter().find(|it| it.id == id))
    }

    pub fn max_net_id(&self) -> u32 {
        self.instterms.iter().map(|it| it.net_id).max().unwrap_or(0)
    }

    pub fn to_json(&self) -> String {
        let file = ProblemFile {
            name: self.name.clone(),
            wsp: WspFile { rows: self.wsp.rows, width: self.wsp.width },
            instterms: {
                let mut v: Vec<_> = self
                    .instterms
                    .iter()
                    .map(|it| InstTermFile {
                        id: it.id,
                        net: it.net_id,
                        kind: it.kind,
                        x1: it.x1,
                        x2: it.x2,
                        row: it.row,
                    })
                    .collect();
                v.sort_by_key(|it| it.id);
                v
            },
        };
        let mut s = serde_json::to_string_pretty(&file).expect("plain data serialises");
        s.push('\n');
        s
    }
}

fn derive_nets(instterms: &[InstTerm]) -> Vec<Net> {
    let mut by_net: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
    for it in instterms {
        by_net.entry(it.net_id).or_default().push(it.id);
    }
    by_net
        .into_iter()
        .map(|(net_id, mut members)| {
            members.sort_unstable();
            Net { net_id, members }
        })
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProblemFile {
    name: String,
    wsp: WspFile,
    instterms: Vec<InstTermFile>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WspFile {
    rows: u32,
    width: u32,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstTermFile {
    id: u32,
    net: u32,
    kind: Kind,
    x1: u32,
    x2: u32,
    row: u32,
}

/// Parses a problem document and rejects anything that violates an invariant.
pub fn parse_problem(text: &str) -> Result<Problem> {
    let file: ProblemFile = serde_json::from_str(text).map_err(|e| Error::Syntax {
        line: e.line(),
        column: e.column(),
        msg: e.to_string(),
    })?;
    let instterms = file
        .instterms
        .into_iter()
        .map(|it| InstTerm {
            id: it.id,
            net_id: it.net,
            kind: it.kind,
            x1: it.x1,
            x2: it.x2,
            row: it.row,
            track: None,
        })
        .collect();
    let p = Problem::new(file.name, WspConfig::new(file.wsp.rows, file.wsp.width), instterms);
    let violations = validate_problem(&p);
    if let Some(first) = violations.first() {
        let all: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
        return Err(Error::Semantic(if all.len() == 1 { first.to_string() } else { all.join("; ") }));
    }
    Ok(p)
}

/// What an invariant violation refers to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Entity {
    Problem,
    InstTerm(u32),
    Net(u32),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub entity: Entity,
    pub rule: &'static str,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.entity {
            Entity::Problem => write!(f, "{}: {}", self.rule, self.detail),
            Entity::InstTerm(id) => write!(f, "{} (instterm {id}): {}", self.rule, self.detail),
            Entity::Net(id) => write!(f, "{} (net {id}): {}", self.rule, self.detail),
        }
    }
}

/// Lists every invariant violation; empty iff the problem is valid.
pub fn validate_problem(p: &Problem) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |entity, rule, detail: String| out.push(Violation { entity, rule, detail });
    if p.wsp.rows == 0 {
        push(Entity::Problem, "empty-grid", "wsp.rows must be positive".into());
    }
    if p.wsp.width == 0 {
        push(Entity::Problem, "empty-grid", "wsp.width must be positive".into());
    }
    let tpr = p.wsp.tracks_per_row;
    for set in [&p.wsp.g_tracks, &p.wsp.sd_tracks, &p.wsp.gsd_tracks] {
        if set.iter().any(|t| *t == 0 || *t > tpr) {
            push(Entity::Problem, "track-range", format!("track set {set:?} outside 1..={tpr}"));
        }
    }
    let inter: Vec<u8> = p.wsp.g_tracks.iter().copied().filter(|t| p.wsp.sd_tracks.contains(t)).collect();
    let mut gsd = p.wsp.gsd_tracks.clone();
    gsd.sort_unstable();
    if gsd != inter {
        push(Entity::Problem, "gsd-tracks", format!("{gsd:?} != G ∩ SD {inter:?}"));
    }
    let mut seen = HashSet::new();
    for it in &p.instterms {
        if !seen.insert(it.id) {
            push(Entity::InstTerm(it.id), "duplicate-id", format!("id {} appears more than once", it.id));
        }
        if it.x1 > it.x2 {
            push(Entity::InstTerm(it.id), "x-order", format!("x1 {} > x2 {}", it.x1, it.x2));
        }
        if it.x2 > p.wsp.width {
            push(Entity::InstTerm(it.id), "x-range", format!("x2 {} beyond width {}", it.x2, p.wsp.width));
        }
        if it.row >= p.wsp.rows {
            push(Entity::InstTerm(it.id), "row-range", format!("row {} >= rows {}", it.row, p.wsp.rows));
        }
        if let Some(t) = it.track {
            if !p.wsp.tracks_for(it.kind).contains(&t) {
                push(Entity::InstTerm(it.id), "ineligible-track", format!("track {t} not legal for {:?}", it.kind));
            }
        }
    }
    let mut member_of: BTreeMap<u32, u32> = BTreeMap::new();
    for net in &p.nets {
        if net.members.is_empty() {
            push(Entity::Net(net.net_id), "empty-net", "net has no members".into());
        }
        for &m in &net.members {
            match p.instterms.iter().find(|it| it.id == m) {
                None => push(Entity::Net(net.net_id), "dangling-member", format!("member {m} does not exist")),
                Some(it) if it.net_id != net.net_id => push(
                    Entity::Net(net.net_id),
                    "net-mismatch",
                    format!("member {m} belongs to net {}", it.net_id),
                ),
                Some(_) => {}
            }
            if let Some(prev) = member_of.insert(m, net.net_id) {
                push(Entity::InstTerm(m), "net-partition", format!("listed in nets {prev} and {}", net.net_id));
            }
        }
    }
    for it in &p.instterms {
        if !member_of.contains_key(&it.id) {
            push(Entity::InstTerm(it.id), "net-partition", "not a member of any net".into());
        }
    }
    out
}

/// Inclusive integer range used by the generator config.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub min: u32,
    pub max: u32,
}

impl Span {
    pub fn new(min: u32, max: u32) -> Self {
        Self { min, max }
    }

    pub fn fixed(v: u32) -> Self {
        Self { min: v, max: v }
    }

    fn sample(&self, rng: &mut impl Rng) -> u32 {
        rng.gen_range(self.min..=self.max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub n_instterms: Span,
    pub nets_count: Span,
    pub rows: u32,
    pub width: u32,
    /// Probabilities of G, SD and GSD terminals.
    pub kind_mix: [f64; 3],
    /// Bar length (x2 - x1) range.
    #[serde(default = "default_bar_length")]
    pub bar_length: Span,
    /// Half-width of the window around a net's centre column in which its
    /// members are placed.
    #[serde(default = "default_spread")]
    pub spread: u32,
    pub seed: u64,
}

fn default_bar_length() -> Span {
    Span::new(0, 3)
}

fn default_spread() -> u32 {
    6
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            n_instterms: Span::new(10, 30),
            nets_count: Span::new(3, 10),
            rows: 3,
            width: 24,
            kind_mix: [0.4, 0.4, 0.2],
            bar_length: default_bar_length(),
            spread: default_spread(),
            seed: 0,
        }
    }
}

impl GenConfig {
    /// Two-row, 24-column problems with short bars and wide nets. With the
    /// pair filter `10..=30` this yields the small problem class used for
    /// training: dense enough that routing order changes the cost.
    pub fn small_like(seed: u64) -> Self {
        Self {
            n_instterms: Span::new(20, 40),
            nets_count: Span::new(3, 16),
            rows: 2,
            width: 24,
            bar_length: Span::new(0, 2),
            spread: 10,
            seed,
            ..Self::default()
        }
    }

    fn check(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Invalid(format!("generator config: {m}")));
        if self.n_instterms.min > self.n_instterms.max || self.nets_count.min > self.nets_count.max {
            return bad("empty range");
        }
        if self.nets_count.min == 0 {
            return bad("need at least one net");
        }
        if self.bar_length.min > self.bar_length.max {
            return bad("empty bar length range");
        }
        if self.rows == 0 || self.width == 0 {
            return bad("rows and width must be positive");
        }
        if self.kind_mix.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return bad("kind probabilities must lie in [0, 1]");
        }
        if (self.kind_mix.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad("kind probabilities must sum to 1");
        }
        if self.bar_length.min > self.width {
            return bad("bars longer than the row");
        }
        Ok(())
    }

    /// Upper bound on instTerms the rows can hold: on one track, closed
    /// integer intervals of different nets need a one-unit gap.
    pub fn capacity(&self) -> u64 {
        self.rows as u64 * TRACKS_PER_ROW as u64 * ((self.width as u64 + 2) / 2)
    }
}

/// Draws a synthetic problem. Deterministic for a fixed `cfg.seed`.
pub fn generate_problem(cfg: &GenConfig) -> Result<Problem> {
    generate_named(cfg, format!("gen-{}", cfg.seed))
}

pub fn generate_named(cfg: &GenConfig, name: impl Into<String>) -> Result<Problem> {
    cfg.check()?;
    if cfg.n_instterms.max as u64 > cfg.capacity() || cfg.n_instterms.min < 2 {
        return Err(Error::InfeasibleConfig(format!(
            "{}..={} instterms requested; {} rows of width {} hold at most {} (and each net needs 2)",
            cfg.n_instterms.min,
            cfg.n_instterms.max,
            cfg.rows,
            cfg.width,
            cfg.capacity()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.n_instterms.sample(&mut rng);
    let nets = cfg.nets_count.sample(&mut rng).clamp(1, n / 2);

    // two members per net first, the rest spread at random
    let mut net_of: Vec<u32> = (0..nets).flat_map(|k| [k, k]).collect();
    net_of.extend((0..n - 2 * nets).map(|_| rng.gen_range(0..nets)));
    net_of.shuffle(&mut rng);

    let centres: Vec<(u32, u32)> = (0..nets)
        .map(|_| (rng.gen_range(0..=cfg.width), rng.gen_range(0..cfg.rows)))
        .collect();
    let kinds = [Kind::G, Kind::SD, Kind::GSD];
    let mut instterms = Vec::with_capacity(n as usize);
    for (id, &net) in net_of.iter().enumerate() {
        let (cx, crow) = centres[net as usize];
        let len = cfg.bar_length.sample(&mut rng).min(cfg.width);
        let lo = cx.saturating_sub(cfg.spread);
        let hi = (cx + cfg.spread).min(cfg.width - len);
        let x1 = if lo >= hi { hi } else { rng.gen_range(lo..=hi) };
        let row = {
            let r = crow as i64 + rng.gen_range(-1..=1);
            r.clamp(0, cfg.rows as i64 - 1) as u32
        };
        let u: f64 = rng.gen();
        let kind = if u < cfg.kind_mix[0] {
            kinds[0]
        } else if u < cfg.kind_mix[0] + cfg.kind_mix[1] {
            kinds[1]
        } else {
            kinds[2]
        };
        instterms.push(InstTerm { id: id as u32, net_id: net, kind, x1, x2: x1 + len, row, track: None });
    }
    let p = Problem::new(name, WspConfig::new(cfg.rows, cfg.width), instterms);
    debug_assert!(validate_problem(&p).is_empty());
    Ok(p)
}

/// Shuffles with `seed` and cuts into train/val/test. Validation and test
/// sizes are floored; the remainder goes to training.
pub fn split_dataset<T: Clone>(items: &[T], ratios: (f64, f64, f64), seed: u64) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    let (tr, va, te) = ratios;
    if items.is_empty() {
        return Err(Error::Invalid("cannot split an empty dataset".into()));
    }
    if [tr, va, te].iter().any(|r| *r < 0.0) || (tr + va + te - 1.0).abs() > 1e-9 {
        return Err(Error::Invalid(format!("split ratios {ratios:?} must be non-negative and sum to 1")));
    }
    let n = items.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = (n as f64 * va).floor() as usize;
    let n_test = (n as f64 * te).floor() as usize;
    let n_train = n - n_val - n_test;
    let pick = |r: &[usize]| r.iter().map(|&i| items[i].clone()).collect::<Vec<_>>();
    Ok((
        pick(&idx[..n_train]),
        pick(&idx[n_train..n_train + n_val]),
        pick(&idx[n_train + n_val..]),
    ))
}
