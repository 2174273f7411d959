//! Placement-aware routing of source/drain/gate terminals in a cell's
//! wire-space: track assignment, net decomposition, pattern routing and
//! two routing-order search strategies (a genetic algorithm and an
//! attention-based policy trained with REINFORCE).

pub mod attention;
pub mod decompose;
pub mod error;
pub mod ga;
pub mod problem;
pub mod router;
pub mod sequence;
pub mod stats;
pub mod track;

pub use decompose::{decompose_problem, Bar, InstTermPair, PadStrategy, RoutingInstance};
pub use error::{Error, Result};
pub use problem::{generate_problem, parse_problem, validate_problem, GenConfig, Kind, Problem};
pub use track::{assign_tracks, TrackAssignment};
pub use router::{route_sequence, RouteResult, RouteSolution};
pub use ga::{ga_sequence, GaParams, GaResult};
pub use sequence::{oracle_sequence, random_mean_cost, seeded_random_order, ORACLE_MAX_PAIRS};
pub use stats::{paired_ttest, pearson};
pub use attention::{Policy32, Policy64, TrainHyper};
