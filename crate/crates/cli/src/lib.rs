//! Experiment harness for the wsproute router: dataset generation, single
//! problem routing, policy training, sequencer comparison and SVG export.

pub mod commands;
pub mod error;
pub mod fsio;
pub mod report;
pub mod svg;

pub use commands::{
    cmd_compare, cmd_export_svg, cmd_gen, cmd_route, cmd_train, CompareArgs, GenArgs, Manifest, RouteArgs, SplitName,
    TrainArgs,
};
pub use error::{CliError, CliResult};
pub use report::{RunReport, Sequencer, SolutionFile};
