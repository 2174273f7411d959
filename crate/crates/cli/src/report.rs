//! Records written by the harness commands.

use clap::ValueEnum;
use serde::{Deserialize, Serialize};
use wsproute::decompose::Bar;
use wsproute::router::{routing_cost, RouteResult, RouteSolution};
use wsproute::RoutingInstance;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Sequencer {
    Attention,
    Ga,
    Random,
    Oracle,
}

/// Outcome of one routed problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub problem: String,
    pub sequencer: Sequencer,
    pub pairs: usize,
    pub cost: u64,
    pub wirelength: u64,
    pub opens: u64,
    /// Sequencing plus routing, in seconds.
    pub wall_time_s: f64,
    pub seed: u64,
}

impl RunReport {
    pub fn new(problem: &str, sequencer: Sequencer, sol: &RouteSolution, wall_time_s: f64, seed: u64) -> Self {
        Self {
            problem: problem.to_string(),
            sequencer,
            pairs: sol.results.len(),
            cost: sol.cost,
            wirelength: sol.total_wirelength,
            opens: sol.open_count,
            wall_time_s,
            seed,
        }
    }

    /// `cost = wirelength + 10 × opens`.
    pub fn is_consistent(&self) -> bool {
        self.cost == routing_cost(self.wirelength, self.opens)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairRef {
    pub a: u32,
    pub b: u32,
    pub net: u32,
}

/// Routed geometry of one problem, enough to redraw it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionFile {
    pub problem: String,
    pub width: u32,
    pub height: u32,
    pub bars: Vec<Bar>,
    /// InstTerms the track assigner could not place.
    pub unassigned: Vec<u32>,
    pub pairs: Vec<PairRef>,
    pub order: Vec<usize>,
    /// Indexed like `pairs`.
    pub results: Vec<RouteResult>,
    pub wirelength: u64,
    pub opens: u64,
    pub cost: u64,
}

impl SolutionFile {
    pub fn new(inst: &RoutingInstance, unassigned: Vec<u32>, sol: &RouteSolution) -> Self {
        Self {
            problem: inst.name.clone(),
            width: inst.width,
            height: inst.height,
            bars: inst.bars.clone(),
            unassigned,
            pairs: inst.pairs.iter().map(|p| PairRef { a: p.a, b: p.b, net: p.net_id }).collect(),
            order: sol.order.clone(),
            results: sol.results.clone(),
            wirelength: sol.total_wirelength,
            opens: sol.open_count,
            cost: sol.cost,
        }
    }
}
