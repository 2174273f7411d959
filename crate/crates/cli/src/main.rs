use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use wsproute::{GaParams, GenConfig, PadStrategy, TrainHyper};
use wsproute_cli::fsio::read_json;
use wsproute_cli::{
    cmd_compare, cmd_export_svg, cmd_gen, cmd_route, cmd_train, CliResult, CompareArgs, GenArgs, RouteArgs,
    Sequencer, SplitName, TrainArgs,
};

#[derive(Parser)]
#[command(name = "wsproute", version, about = "WSP detailed routing with learned pair sequencing")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic problem set with a manifest and split.
    Gen(GenOpts),
    /// Assign, decompose, sequence and route one problem.
    Route(RouteOpts),
    /// Train the attention policy on a generated dataset.
    Train(TrainOpts),
    /// Compare attention, GA and random sequencing on a dataset split.
    Compare(CompareOpts),
    /// Render a routed solution as SVG.
    ExportSvg(ExportOpts),
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Preset {
    Default,
    Small,
}

#[derive(Args)]
struct GenOpts {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Number of problems.
    #[arg(long, default_value_t = 10)]
    count: usize,
    /// Generator config as JSON (overrides --preset; its seed is replaced by --seed).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Preset::Default)]
    preset: Preset,
    /// Keep only problems with MIN..=MAX pairs, e.g. 10..30.
    #[arg(long, value_parser = parse_window)]
    pairs: Option<(usize, usize)>,
    /// Train, validation and test ratios.
    #[arg(long, default_value = "0.8,0.1,0.1", value_parser = parse_ratios)]
    split: (f64, f64, f64),
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct GaOpts {
    /// GA generations.
    #[arg(long = "ga-generations", default_value_t = 10)]
    generations: usize,
    /// GA population size.
    #[arg(long = "ga-population", default_value_t = 10)]
    population: usize,
    /// Elites kept as parents each generation.
    #[arg(long = "ga-elites", default_value_t = 4)]
    elites: usize,
    /// Swap mutations per child.
    #[arg(long = "ga-mutations", default_value_t = 1)]
    mutations: usize,
}

impl GaOpts {
    fn params(&self, seed: u64) -> GaParams {
        GaParams {
            generations: self.generations,
            population: self.population,
            elites: self.elites,
            mutations: self.mutations,
            seed,
        }
    }
}

#[derive(Args)]
struct RouteOpts {
    /// Problem JSON file.
    problem: PathBuf,
    #[arg(long, value_enum, default_value_t = Sequencer::Ga)]
    sequencer: Sequencer,
    /// Trained policy (attention sequencer only).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    ga: GaOpts,
    /// Padding size for non-attention sequencers (default: pair count).
    #[arg(long)]
    n_max: Option<usize>,
    #[arg(long, default_value = "empty")]
    pad: PadStrategy,
    /// Output directory for report.json, solution.csv and solution.json.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Also write route.svg.
    #[arg(long)]
    svg: bool,
}

#[derive(Args)]
struct TrainOpts {
    /// Dataset directory written by `gen`.
    dataset: PathBuf,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 20)]
    batches: usize,
    #[arg(long, default_value_t = 5)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    /// Significance level of the baseline refresh test.
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value = "empty")]
    pad: PadStrategy,
    #[arg(long, default_value_t = 64)]
    dim: usize,
    #[arg(long, default_value_t = 8)]
    heads: usize,
    #[arg(long, default_value_t = 2)]
    layers: usize,
    /// Feed-forward width (default: 4 × dim).
    #[arg(long)]
    ff: Option<usize>,
    /// Padding size (default: largest pair count in the dataset).
    #[arg(long)]
    n_max: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "policy.dfc")]
    checkpoint: PathBuf,
    #[arg(long, default_value = "curve.csv")]
    curve: PathBuf,
    /// No per-epoch progress on stderr.
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct CompareOpts {
    /// Dataset directory written by `gen`.
    dataset: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitName::Test)]
    split: SplitName,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Random orders averaged per problem.
    #[arg(long, default_value_t = 20)]
    samples: usize,
    #[command(flatten)]
    ga: GaOpts,
    /// Output directory for compare.csv, scatter.csv and summary.json.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct ExportOpts {
    /// Problem JSON file.
    problem: PathBuf,
    /// solution.json written by `route`.
    solution: PathBuf,
    #[arg(long, default_value = "route.svg")]
    out: PathBuf,
}

fn parse_window(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once("..").ok_or("expected MIN..MAX")?;
    let lo: usize = a.trim().parse().map_err(|e| format!("{e}"))?;
    let hi: usize = b.trim_start_matches('=').trim().parse().map_err(|e| format!("{e}"))?;
    if lo > hi {
        return Err(format!("empty window {lo}..{hi}"));
    }
    Ok((lo, hi))
}

fn parse_ratios(s: &str) -> Result<(f64, f64, f64), String> {
    let v: Vec<f64> = s.split(',').map(|x| x.trim().parse::<f64>().map_err(|e| e.to_string())).collect::<Result<_, _>>()?;
    match v[..] {
        [a, b, c] => Ok((a, b, c)),
        _ => Err("expected three comma-separated ratios".into()),
    }
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.cmd {
        Cmd::Gen(o) => {
            let base = match &o.config {
                Some(path) => read_json::<GenConfig>(path)?,
                None => match o.preset {
                    Preset::Default => GenConfig::default(),
                    Preset::Small => GenConfig::small_like(0),
                },
            };
            let m = cmd_gen(&GenArgs {
                config: GenConfig { seed: o.seed, ..base },
                count: o.count,
                out: o.out.clone(),
                pairs: o.pairs,
                split: o.split,
            })?;
            println!(
                "wrote {} problems to {} (train {}, val {}, test {})",
                m.problems.len(),
                o.out.display(),
                m.split.train.len(),
                m.split.val.len(),
                m.split.test.len()
            );
        }
        Cmd::Route(o) => {
            let out = cmd_route(&RouteArgs {
                problem: o.problem,
                sequencer: o.sequencer,
                checkpoint: o.checkpoint,
                seed: o.seed,
                ga: o.ga.params(o.seed),
                n_max: o.n_max,
                pad: o.pad,
                out: o.out,
                svg: o.svg,
            })?;
            let r = &out.report;
            println!(
                "{} {}: cost {} (wirelength {}, opens {}) in {:.4}s",
                r.problem,
                format!("{:?}", r.sequencer).to_lowercase(), r.cost, r.wirelength, r.opens, r.wall_time_s
            );
        }
        Cmd::Train(o) => {
            let hyper = TrainHyper {
                epochs: o.epochs,
                batches: o.batches,
                batch_size: o.batch_size,
                lr: o.lr,
                alpha: o.alpha,
                seed: o.seed,
                dim: o.dim,
                heads: o.heads,
                layers: o.layers,
                ff: o.ff.unwrap_or(4 * o.dim),
            };
            let s = cmd_train(&TrainArgs {
                dataset: o.dataset,
                hyper,
                pad: o.pad,
                n_max: o.n_max,
                checkpoint: o.checkpoint.clone(),
                curve: o.curve,
                quiet: o.quiet,
            })?;
            println!(
                "best epoch {} with validation cost {:.3}; policy written to {}",
                s.best_epoch,
                s.best_val_cost,
                o.checkpoint.display()
            );
        }
        Cmd::Compare(o) => {
            let (_, s) = cmd_compare(&CompareArgs {
                dataset: o.dataset,
                checkpoint: o.checkpoint,
                split: o.split,
                seed: o.seed,
                samples: o.samples,
                ga: o.ga.params(o.seed),
                out: o.out,
            })?;
            println!(
                "{} problems: attention {:.3}, GA {:.3}, random {:.3}; pearson {}; median speedup {:.1}x",
                s.problems,
                s.attention_mean_cost,
                s.ga_mean_cost,
                s.random_mean_cost,
                s.pearson.map_or("n/a".to_string(), |r| format!("{r:.3}")),
                s.median_speedup
            );
        }
        Cmd::ExportSvg(o) => {
            cmd_export_svg(&o.problem, &o.solution, &o.out)?;
            println!("wrote {}", o.out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("wsproute: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
