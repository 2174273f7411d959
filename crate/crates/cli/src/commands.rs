//! The five harness commands as library functions.

use std::path::{Path, PathBuf};
use std::time::Instant;

use diffcore::Checkpoint;
use serde::{Deserialize, Serialize};
use wsproute::attention::{greedy_rollout, reinforce_train, EpochRecord, PolicyParams, TrainHyper};
use wsproute::decompose::pair_count;
use wsproute::problem::{generate_named, split_dataset};
use wsproute::router::route_sequence;
use wsproute::{
    assign_tracks, decompose_problem, ga_sequence, oracle_sequence, parse_problem, pearson, random_mean_cost,
    seeded_random_order, validate_problem, GaParams, GenConfig, PadStrategy, Problem, RouteSolution, RoutingInstance,
    TrackAssignment,
};

use crate::error::{CliError, CliResult};
use crate::fsio::{read_json, read_text, write_atomic, write_json};
use crate::report::{RunReport, Sequencer, SolutionFile};
use crate::svg;

pub const MANIFEST: &str = "manifest.json";

// ---------------------------------------------------------------------------
// datasets

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemEntry {
    pub name: String,
    pub file: String,
    pub seed: u64,
    pub pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

/// Index of a generated dataset: how every file was drawn and how the set
/// is split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub generator: GenConfig,
    /// Inclusive pair-count window problems were filtered to, if any.
    pub pair_filter: Option<(usize, usize)>,
    pub split_seed: u64,
    pub problems: Vec<ProblemEntry>,
    pub split: Split,
}

impl Manifest {
    pub fn entry(&self, name: &str) -> Option<&ProblemEntry> {
        self.problems.iter().find(|p| p.name == name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenArgs {
    pub config: GenConfig,
    pub count: usize,
    pub out: PathBuf,
    /// Keep only problems whose pair count lies in this inclusive window.
    pub pairs: Option<(usize, usize)>,
    pub split: (f64, f64, f64),
}

/// Upper bound on generator draws per kept problem under a pair filter.
const MAX_DRAWS_PER_PROBLEM: usize = 1000;

/// Writes `count` problems `p0000.json…` and the manifest. Problem `k` is
/// drawn with seed `config.seed + draw index`; filtered-out draws are
/// skipped, so reruns reproduce the same files.
pub fn cmd_gen(args: &GenArgs) -> CliResult<Manifest> {
    if args.count == 0 {
        return Err(CliError::Usage("count must be positive".into()));
    }
    let mut problems = Vec::with_capacity(args.count);
    let mut draw = 0u64;
    while problems.len() < args.count {
        if draw as usize > MAX_DRAWS_PER_PROBLEM * args.count {
            return Err(CliError::Data(format!(
                "pair filter {:?} rejected {draw} draws; widen it or change the generator config",
                args.pairs
            )));
        }
        let seed = args.config.seed + draw;
        draw += 1;
        let name = format!("p{:04}", problems.len());
        let p = generate_named(&GenConfig { seed, ..args.config.clone() }, name.clone())?;
        let pairs = pair_count(&p, &assign_tracks(&p));
        if args.pairs.is_some_and(|(lo, hi)| !(lo..=hi).contains(&pairs)) {
            continue;
        }
        let violations = validate_problem(&p);
        if !violations.is_empty() {
            return Err(CliError::Runtime(format!("generator produced an invalid problem: {violations:?}")));
        }
        let file = format!("{name}.json");
        write_atomic(&args.out.join(&file), p.to_json().as_bytes())?;
        problems.push(ProblemEntry { name, file, seed, pairs });
    }
    let names: Vec<String> = problems.iter().map(|p| p.name.clone()).collect();
    let (train, val, test) = split_dataset(&names, args.split, args.config.seed)?;
    let manifest = Manifest {
        generator: args.config.clone(),
        pair_filter: args.pairs,
        split_seed: args.config.seed,
        problems,
        split: Split { train, val, test },
    };
    write_json(&args.out.join(MANIFEST), &manifest)?;
    Ok(manifest)
}

pub fn load_manifest(dir: &Path) -> CliResult<Manifest> {
    read_json(&dir.join(MANIFEST))
}

pub fn load_problem(path: &Path) -> CliResult<Problem> {
    let p = parse_problem(&read_text(path)?).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let v = validate_problem(&p);
    if !v.is_empty() {
        let list: Vec<String> = v.iter().map(|x| format!("{x:?}")).collect();
        return Err(CliError::Data(format!("{}: {}", path.display(), list.join("; "))));
    }
    Ok(p)
}

fn load_split(dir: &Path, m: &Manifest, names: &[String]) -> CliResult<Vec<Problem>> {
    names
        .iter()
        .map(|n| {
            let e = m.entry(n).ok_or_else(|| CliError::Data(format!("split names unknown problem {n}")))?;
            load_problem(&dir.join(&e.file))
        })
        .collect()
}

/// Track assignment plus decomposition for every problem.
pub fn prepare(problems: &[Problem], n_max: usize, pad: PadStrategy, seed: u64) -> CliResult<Vec<RoutingInstance>> {
    problems
        .iter()
        .map(|p| Ok(decompose_problem(p, &assign_tracks(p), n_max, pad, seed)?))
        .collect()
}

// ---------------------------------------------------------------------------
// policies

pub fn load_policy(path: &Path) -> CliResult<(PolicyParams<f64>, Checkpoint<f64>)> {
    let f = std::fs::File::open(path).map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    let ck = Checkpoint::<f64>::read_from(std::io::BufReader::new(f))
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let params = PolicyParams::from_checkpoint(&ck)?;
    Ok((params, ck))
}

fn meta_parse<T: std::str::FromStr>(ck: &Checkpoint<f64>, key: &str) -> CliResult<T> {
    ck.meta(key)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| CliError::Data(format!("checkpoint lacks a valid {key:?} entry")))
}

/// Padding size and strategy the policy was trained with.
pub fn policy_shape(ck: &Checkpoint<f64>) -> CliResult<(usize, PadStrategy)> {
    Ok((meta_parse(ck, "n_max")?, meta_parse(ck, "pad")?))
}

// ---------------------------------------------------------------------------
// route

#[derive(Debug, Clone, PartialEq)]
pub struct RouteArgs {
    pub problem: PathBuf,
    pub sequencer: Sequencer,
    pub checkpoint: Option<PathBuf>,
    pub seed: u64,
    pub ga: GaParams,
    /// Padding size for non-attention sequencers (default: the pair count).
    pub n_max: Option<usize>,
    pub pad: PadStrategy,
    pub out: PathBuf,
    pub svg: bool,
}

pub struct RouteOutcome {
    pub report: RunReport,
    pub solution: SolutionFile,
}

/// One sequencer run on an instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequenced {
    pub solution: RouteSolution,
    /// Wall time of sequencing plus routing.
    pub secs: f64,
    /// Best-ever cost per generation, for the GA sequencer.
    pub ga_history: Option<String>,
}

/// Runs one sequencer on an instance and routes the order it picks.
pub fn sequence_and_route(
    inst: &RoutingInstance,
    sequencer: Sequencer,
    policy: Option<&PolicyParams<f64>>,
    ga: &GaParams,
    seed: u64,
) -> CliResult<Sequenced> {
    let start = Instant::now();
    let mut ga_history = None;
    let order = match sequencer {
        Sequencer::Attention => {
            let policy = policy.ok_or_else(|| CliError::Usage("the attention sequencer needs --checkpoint".into()))?;
            greedy_rollout(inst, policy)?.order
        }
        Sequencer::Ga => {
            let run = ga_sequence(inst, &GaParams { seed, ..*ga })?;
            ga_history = Some(run.history_csv());
            run.order
        }
        Sequencer::Random => seeded_random_order(inst.pairs.len(), seed),
        Sequencer::Oracle => oracle_sequence(inst)?.0,
    };
    let solution = route_sequence(inst, &order)?;
    Ok(Sequenced { solution, secs: start.elapsed().as_secs_f64(), ga_history })
}

pub fn cmd_route(args: &RouteArgs) -> CliResult<RouteOutcome> {
    let problem = load_problem(&args.problem)?;
    let ta: TrackAssignment = assign_tracks(&problem);
    let policy = match (&args.checkpoint, args.sequencer) {
        (Some(path), Sequencer::Attention) => Some(load_policy(path)?),
        (None, Sequencer::Attention) => {
            return Err(CliError::Usage("the attention sequencer needs --checkpoint".into()));
        }
        _ => None,
    };
    let (n_max, pad) = match &policy {
        Some((_, ck)) => policy_shape(ck)?,
        None => (args.n_max.unwrap_or_else(|| pair_count(&problem, &ta).max(1)), args.pad),
    };
    let inst = decompose_problem(&problem, &ta, n_max, pad, args.seed)?;
    let run = sequence_and_route(&inst, args.sequencer, policy.as_ref().map(|(p, _)| p), &args.ga, args.seed)?;
    let sol = run.solution;
    let report = RunReport::new(&problem.name, args.sequencer, &sol, run.secs, args.seed);
    let solution = SolutionFile::new(&inst, ta.unassigned.clone(), &sol);
    write_json(&args.out.join("report.json"), &report)?;
    write_atomic(&args.out.join("solution.csv"), sol.to_csv().as_bytes())?;
    write_json(&args.out.join("solution.json"), &solution)?;
    if let Some(history) = run.ga_history {
        write_atomic(&args.out.join("ga_history.csv"), history.as_bytes())?;
    }
    if args.svg {
        write_atomic(&args.out.join("route.svg"), svg::render(&problem, &solution).as_bytes())?;
    }
    Ok(RouteOutcome { report, solution })
}

// ---------------------------------------------------------------------------
// train

#[derive(Debug, Clone, PartialEq)]
pub struct TrainArgs {
    pub dataset: PathBuf,
    pub hyper: TrainHyper,
    pub pad: PadStrategy,
    /// Padding size (default: the largest pair count in the dataset).
    pub n_max: Option<usize>,
    pub checkpoint: PathBuf,
    pub curve: PathBuf,
    pub quiet: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub best_epoch: usize,
    pub best_val_cost: f64,
    pub curve: Vec<EpochRecord>,
    pub n_max: usize,
}

pub fn cmd_train(args: &TrainArgs) -> CliResult<TrainSummary> {
    args.hyper.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let m = load_manifest(&args.dataset)?;
    let train = load_split(&args.dataset, &m, &m.split.train)?;
    let val = load_split(&args.dataset, &m, &m.split.val)?;
    if train.is_empty() || val.len() < 2 {
        return Err(CliError::Data(format!(
            "training needs a non-empty train split and at least 2 validation problems (have {} and {})",
            train.len(),
            val.len()
        )));
    }
    let largest = m.problems.iter().map(|p| p.pairs).max().unwrap_or(1).max(1);
    let n_max = args.n_max.unwrap_or(largest);
    let seed = args.hyper.seed;
    let train = prepare(&train, n_max, args.pad, seed)?;
    let val = prepare(&val, n_max, args.pad, seed)?;
    let quiet = args.quiet;
    let out = reinforce_train::<f64>(&train, &val, &args.hyper, |r| {
        if !quiet {
            eprintln!(
                "epoch {:>4}  train {:>9.3}  val {:>9.3}{}",
                r.epoch,
                r.train_mean_cost,
                r.val_mean_cost,
                if r.baseline_refreshed { "  baseline refreshed" } else { "" }
            );
        }
    })?;
    let h = &args.hyper;
    let meta: Vec<(String, String)> = [
        ("n_max", n_max.to_string()),
        ("pad", format!("{:?}", args.pad).to_lowercase()),
        ("best_epoch", out.best_epoch.to_string()),
        ("best_val_cost", format!("{}", out.best_val_cost)),
        ("epochs", h.epochs.to_string()),
        ("batches", h.batches.to_string()),
        ("batch_size", h.batch_size.to_string()),
        ("lr", h.lr.to_string()),
        ("alpha", h.alpha.to_string()),
        ("seed", h.seed.to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    let mut bytes = Vec::new();
    out.best.to_checkpoint(meta).write_to(&mut bytes).map_err(|e| CliError::Runtime(e.to_string()))?;
    write_atomic(&args.checkpoint, &bytes)?;
    write_atomic(&args.curve, out.curve_csv().as_bytes())?;
    Ok(TrainSummary { best_epoch: out.best_epoch, best_val_cost: out.best_val_cost, curve: out.curve, n_max })
}

// ---------------------------------------------------------------------------
// compare

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareArgs {
    pub dataset: PathBuf,
    pub checkpoint: PathBuf,
    pub split: SplitName,
    pub seed: u64,
    /// Uniform random orders averaged per problem.
    pub samples: usize,
    pub ga: GaParams,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareRow {
    pub problem: String,
    pub pairs: usize,
    pub attention_cost: u64,
    pub attention_time_s: f64,
    pub ga_cost: u64,
    pub ga_time_s: f64,
    pub random_mean_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareSummary {
    pub problems: usize,
    pub attention_mean_cost: f64,
    pub ga_mean_cost: f64,
    pub random_mean_cost: f64,
    /// Pearson correlation of attention and GA costs (absent when either
    /// side is constant).
    pub pearson: Option<f64>,
    pub attention_faster_fraction: f64,
    pub median_speedup: f64,
}

pub fn compare_csv(rows: &[CompareRow]) -> String {
    let mut s = String::from("problem,pairs,attention_cost,attention_time_s,ga_cost,ga_time_s,random_mean_cost\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{:.6},{},{:.6},{:.4}\n",
            r.problem, r.pairs, r.attention_cost, r.attention_time_s, r.ga_cost, r.ga_time_s, r.random_mean_cost
        ));
    }
    s
}

/// `ga_cost,attention_cost` points of the cost scatter.
pub fn scatter_csv(rows: &[CompareRow]) -> String {
    let mut s = String::from("problem,ga_cost,attention_cost\n");
    for r in rows {
        s.push_str(&format!("{},{},{}\n", r.problem, r.ga_cost, r.attention_cost));
    }
    s
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n.max(1) as f64
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let k = v.len() / 2;
    if v.len() % 2 == 1 {
        v[k]
    } else {
        (v[k - 1] + v[k]) / 2.0
    }
}

pub fn summarize(rows: &[CompareRow]) -> CliResult<CompareSummary> {
    let att: Vec<f64> = rows.iter().map(|r| r.attention_cost as f64).collect();
    let ga: Vec<f64> = rows.iter().map(|r| r.ga_cost as f64).collect();
    let pearson = if rows.len() >= 2 { pearson(&att, &ga)? } else { None };
    let faster = rows.iter().filter(|r| r.attention_time_s < r.ga_time_s).count();
    Ok(CompareSummary {
        problems: rows.len(),
        attention_mean_cost: mean(att.iter().copied()),
        ga_mean_cost: mean(ga.iter().copied()),
        random_mean_cost: mean(rows.iter().map(|r| r.random_mean_cost)),
        pearson,
        attention_faster_fraction: faster as f64 / rows.len().max(1) as f64,
        median_speedup: median(rows.iter().map(|r| r.ga_time_s / r.attention_time_s.max(1e-12)).collect()),
    })
}

/// Attention greedy vs GA vs random orders on one split. Problems run one
/// after another so the timings do not compete for cores. Rows are sorted
/// by GA cost, then name.
pub fn compare_instances(
    insts: &[RoutingInstance],
    policy: &PolicyParams<f64>,
    ga: &GaParams,
    samples: usize,
    seed: u64,
) -> CliResult<Vec<CompareRow>> {
    let mut rows = Vec::with_capacity(insts.len());
    for inst in insts {
        let att = sequence_and_route(inst, Sequencer::Attention, Some(policy), ga, seed)?;
        let gas = sequence_and_route(inst, Sequencer::Ga, None, ga, seed)?;
        rows.push(CompareRow {
            problem: inst.name.clone(),
            pairs: inst.pairs.len(),
            attention_cost: att.solution.cost,
            attention_time_s: att.secs,
            ga_cost: gas.solution.cost,
            ga_time_s: gas.secs,
            random_mean_cost: random_mean_cost(inst, samples, seed)?,
        });
    }
    rows.sort_by(|a, b| a.ga_cost.cmp(&b.ga_cost).then_with(|| a.problem.cmp(&b.problem)));
    Ok(rows)
}

pub fn cmd_compare(args: &CompareArgs) -> CliResult<(Vec<CompareRow>, CompareSummary)> {
    if args.samples == 0 {
        return Err(CliError::Usage("--samples must be positive".into()));
    }
    let m = load_manifest(&args.dataset)?;
    let names = match args.split {
        SplitName::Train => &m.split.train,
        SplitName::Val => &m.split.val,
        SplitName::Test => &m.split.test,
    };
    let problems = load_split(&args.dataset, &m, names)?;
    let (policy, ck) = load_policy(&args.checkpoint)?;
    let (n_max, pad) = policy_shape(&ck)?;
    let insts = prepare(&problems, n_max, pad, args.seed)?;
    let rows = compare_instances(&insts, &policy, &args.ga, args.samples, args.seed)?;
    let summary = summarize(&rows)?;
    write_atomic(&args.out.join("compare.csv"), compare_csv(&rows).as_bytes())?;
    write_atomic(&args.out.join("scatter.csv"), scatter_csv(&rows).as_bytes())?;
    write_json(&args.out.join("summary.json"), &summary)?;
    Ok((rows, summary))
}

// ---------------------------------------------------------------------------
// export-svg

pub fn cmd_export_svg(problem: &Path, solution: &Path, out: &Path) -> CliResult<String> {
    let p = load_problem(problem)?;
    let sol: SolutionFile = read_json(solution)?;
    if sol.problem != p.name || sol.width != p.wsp.width || sol.height != p.wsp.height() {
        return Err(CliError::Data(format!(
            "solution for {:?} ({}×{}) does not match problem {:?} ({}×{})",
            sol.problem,
            sol.width,
            sol.height,
            p.name,
            p.wsp.width,
            p.wsp.height()
        )));
    }
    if sol.results.len() != sol.pairs.len() {
        return Err(CliError::Data("solution has a different number of results and pairs".into()));
    }
    let doc = svg::render(&p, &sol);
    write_atomic(out, doc.as_bytes())?;
    Ok(doc)
}
