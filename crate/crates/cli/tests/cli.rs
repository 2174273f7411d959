//! End-to-end runs of the `wsproute` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;
use wsproute::decompose::pair_count;
use wsproute::problem::Span;
use wsproute::sequence::next_permutation;
use wsproute::{assign_tracks, decompose_problem, pearson, route_sequence, GenConfig, PadStrategy};
use wsproute_cli::commands::{load_manifest, load_policy, load_problem, policy_shape, prepare, summarize, CompareRow};
use wsproute_cli::SolutionFile;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wsproute")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn code(args: &[&str]) -> i32 {
    run(args).status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

/// Single-row problems small enough for exhaustive sequencing.
fn tiny_dataset(dir: &Path, count: usize) {
    let cfg = GenConfig {
        n_instterms: Span::new(6, 9),
        nets_count: Span::new(3, 4),
        rows: 1,
        width: 5,
        bar_length: Span::new(1, 3),
        spread: 2,
        ..GenConfig::default()
    };
    let cfg_path = dir.join("tiny.json");
    fs::write(&cfg_path, serde_json::to_string(&cfg).unwrap()).unwrap();
    let out = dir.join("data");
    ok(&["gen", "--config", s(&cfg_path), "--count", &count.to_string(), "--out", s(&out), "--pairs", "2..4", "--seed", "3"]);
}

fn problem_files(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> =
        fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).filter(|p| p.file_name().unwrap() != "manifest.json").collect();
    v.sort();
    v
}

/// Minimum cost over every routing order.
fn enumerated_optimum(problem: &Path) -> u64 {
    let p = load_problem(problem).unwrap();
    let ta = assign_tracks(&p);
    let n = pair_count(&p, &ta);
    let inst = decompose_problem(&p, &ta, n.max(1), PadStrategy::Empty, 0).unwrap();
    let mut order: Vec<usize> = (0..n).collect();
    let mut best = u64::MAX;
    loop {
        best = best.min(route_sequence(&inst, &order).unwrap().cost);
        if !next_permutation(&mut order) {
            return best;
        }
    }
}

fn cost_fields(report: &Value) -> (u64, u64, u64) {
    let g = |k: &str| report[k].as_u64().unwrap();
    (g("cost"), g("wirelength"), g("opens"))
}

#[test]
fn gen_writes_count_files_and_reruns_identically() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        ok(&["gen", "--count", "5", "--out", s(dir), "--seed", "9"]);
    }
    let files = problem_files(&a);
    let names: Vec<String> = files.iter().map(|p| p.file_name().unwrap().to_string_lossy().into_owned()).collect();
    assert_eq!(names, ["p0000.json", "p0001.json", "p0002.json", "p0003.json", "p0004.json"]);
    for f in &files {
        load_problem(f).unwrap();
        assert_eq!(fs::read(f).unwrap(), fs::read(b.join(f.file_name().unwrap())).unwrap());
    }
    assert_eq!(fs::read(a.join("manifest.json")).unwrap(), fs::read(b.join("manifest.json")).unwrap());
    let m = load_manifest(&a).unwrap();
    assert_eq!(m.problems.len(), 5);
    assert_eq!(m.split.train.len() + m.split.val.len() + m.split.test.len(), 5);
    assert!(m.problems.iter().all(|p| p.seed >= 9));
}

#[test]
fn pair_filter_is_honoured() {
    let tmp = TempDir::new().unwrap();
    tiny_dataset(tmp.path(), 6);
    let m = load_manifest(&tmp.path().join("data")).unwrap();
    assert_eq!(m.pair_filter, Some((2, 4)));
    for e in &m.problems {
        let p = load_problem(&tmp.path().join("data").join(&e.file)).unwrap();
        assert_eq!(pair_count(&p, &assign_tracks(&p)), e.pairs);
        assert!((2..=4).contains(&e.pairs));
    }
}

#[test]
fn oracle_route_is_the_enumerated_optimum_and_dominates() {
    let tmp = TempDir::new().unwrap();
    tiny_dataset(tmp.path(), 6);
    for (k, f) in problem_files(&tmp.path().join("data")).iter().enumerate() {
        let best = enumerated_optimum(f);
        let mut costs = Vec::new();
        for seq in ["oracle", "ga", "random"] {
            let out = tmp.path().join(format!("r{k}-{seq}"));
            ok(&["route", s(f), "--sequencer", seq, "--seed", "4", "--ga-generations", "6", "--out", s(&out)]);
            let (cost, wl, opens) = cost_fields(&json(&out.join("report.json")));
            assert_eq!(cost, wl + 10 * opens);
            costs.push(cost);
            let history = out.join("ga_history.csv");
            assert_eq!(history.exists(), seq == "ga");
            if seq == "ga" {
                let text = fs::read_to_string(history).unwrap();
                let mut lines = text.lines();
                assert_eq!(lines.next(), Some("generation,best_cost"));
                let best: Vec<u64> = lines.map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
                assert_eq!(best.len(), 6);
                assert!(best.windows(2).all(|w| w[1] <= w[0]));
                assert_eq!(*best.last().unwrap(), cost);
            }
        }
        assert_eq!(costs[0], best, "{}", f.display());
        assert!(costs[1..].iter().all(|c| *c >= best));
    }
}

#[test]
fn random_route_is_reproducible() {
    let tmp = TempDir::new().unwrap();
    ok(&["gen", "--count", "1", "--out", s(&tmp.path().join("d")), "--seed", "2"]);
    let problem = tmp.path().join("d/p0000.json");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        ok(&["route", s(&problem), "--sequencer", "random", "--seed", "17", "--out", s(dir)]);
    }
    for f in ["solution.csv", "solution.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let (mut ra, mut rb) = (json(&a.join("report.json")), json(&b.join("report.json")));
    assert!(ra["wall_time_s"].as_f64().unwrap() >= 0.0);
    ra["wall_time_s"] = Value::Null;
    rb["wall_time_s"] = Value::Null;
    assert_eq!(ra, rb);
    let csv = fs::read_to_string(a.join("solution.csv")).unwrap();
    assert!(csv.lines().next().unwrap().contains(','), "CSV starts with a header");
}

fn small_training(tmp: &Path) -> (PathBuf, PathBuf, PathBuf) {
    let data = tmp.join("data");
    ok(&["gen", "--count", "12", "--out", s(&data), "--seed", "5", "--split", "0.5,0.25,0.25"]);
    let (ck, curve) = (tmp.join("policy.dfc"), tmp.join("curve.csv"));
    ok(&[
        "train", s(&data), "--epochs", "1", "--batches", "2", "--batch-size", "2", "--dim", "8", "--heads", "2",
        "--layers", "1", "--ff", "16", "--lr", "1e-3", "--seed", "1", "--checkpoint", s(&ck), "--curve", s(&curve),
        "--quiet",
    ]);
    (data, ck, curve)
}

#[test]
fn train_smoke_run_and_checkpoint_fidelity() {
    let tmp = TempDir::new().unwrap();
    let (data, ck, curve) = small_training(tmp.path());
    let text = fs::read_to_string(&curve).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2, "{text}");
    assert_eq!(lines[0], "epoch,train_mean_cost,val_mean_cost,baseline_refreshed");
    let recorded: f64 = lines[1].split(',').nth(2).unwrap().parse().unwrap();

    // re-evaluating the written policy reproduces the recorded validation cost
    let (policy, meta) = load_policy(&ck).unwrap();
    let (n_max, pad) = policy_shape(&meta).unwrap();
    let m = load_manifest(&data).unwrap();
    let val: Vec<_> = m.split.val.iter().map(|n| load_problem(&data.join(format!("{n}.json"))).unwrap()).collect();
    let insts = prepare(&val, n_max, pad, 1).unwrap();
    let costs = wsproute::attention::greedy_costs(&insts, &policy).unwrap();
    let mean = costs.iter().sum::<u64>() as f64 / costs.len() as f64;
    // the curve prints six decimals, the checkpoint keeps the exact value
    assert!((mean - recorded).abs() < 1e-6, "{mean} vs {recorded}");
    assert_eq!(meta.meta("best_val_cost").unwrap().parse::<f64>().unwrap(), mean);

    // the policy routes any dataset problem; a larger problem is refused
    let problem = data.join(&m.problems[0].file);
    let out = tmp.path().join("att");
    ok(&["route", s(&problem), "--sequencer", "attention", "--checkpoint", s(&ck), "--out", s(&out)]);
    let (cost, wl, opens) = cost_fields(&json(&out.join("report.json")));
    assert_eq!(cost, wl + 10 * opens);
    let big = tmp.path().join("big");
    let cfg = GenConfig { n_instterms: Span::new(60, 60), nets_count: Span::new(25, 25), ..GenConfig::default() };
    let cfg_path = tmp.path().join("big.json");
    fs::write(&cfg_path, serde_json::to_string(&cfg).unwrap()).unwrap();
    ok(&["gen", "--config", s(&cfg_path), "--count", "1", "--out", s(&big)]);
    let big_problem = big.join("p0000.json");
    let p = load_problem(&big_problem).unwrap();
    assert!(pair_count(&p, &assign_tracks(&p)) > n_max);
    let args = ["route", s(&big_problem), "--sequencer", "attention", "--checkpoint", s(&ck), "--out", s(&out)];
    assert_eq!(code(&args), 2);
}

#[test]
fn compare_emits_one_sorted_row_per_problem() {
    let tmp = TempDir::new().unwrap();
    let (data, ck, _) = small_training(tmp.path());
    let out = tmp.path().join("cmp");
    ok(&["compare", s(&data), "--checkpoint", s(&ck), "--split", "train", "--samples", "5", "--out", s(&out)]);
    let m = load_manifest(&data).unwrap();
    let csv = fs::read_to_string(out.join("compare.csv")).unwrap();
    let rows: Vec<Vec<&str>> = csv.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), m.split.train.len());
    let ga: Vec<u64> = rows.iter().map(|r| r[4].parse().unwrap()).collect();
    assert!(ga.windows(2).all(|w| w[0] <= w[1]));
    assert_eq!(fs::read_to_string(out.join("scatter.csv")).unwrap().lines().count(), rows.len() + 1);
    let summary = json(&out.join("summary.json"));
    assert_eq!(summary["problems"].as_u64().unwrap() as usize, rows.len());
}

#[test]
fn correlation_of_a_set_with_itself_is_one() {
    let rows: Vec<CompareRow> = [30u64, 12, 45, 18]
        .iter()
        .enumerate()
        .map(|(k, c)| CompareRow {
            problem: format!("p{k}"),
            pairs: 3,
            attention_cost: *c,
            attention_time_s: 0.001,
            ga_cost: *c,
            ga_time_s: 0.01,
            random_mean_cost: *c as f64,
        })
        .collect();
    let s = summarize(&rows).unwrap();
    assert!((s.pearson.unwrap() - 1.0).abs() < 1e-12);
    assert!((s.median_speedup - 10.0).abs() < 1e-9);
    assert_eq!(s.attention_faster_fraction, 1.0);
    let v = [3.0, 1.0, 4.0, 1.5];
    assert!((pearson(&v, &v).unwrap().unwrap() - 1.0).abs() < 1e-12);
}

fn count_class(doc: &roxmltree::Document, tag: &str, class: &str) -> usize {
    doc.descendants().filter(|n| n.has_tag_name(tag) && n.attribute("class") == Some(class)).count()
}

#[test]
fn svg_is_well_formed_and_counts_match() {
    let tmp = TempDir::new().unwrap();
    ok(&["gen", "--count", "3", "--out", s(&tmp.path().join("d")), "--seed", "4"]);
    for k in 0..3 {
        let problem = tmp.path().join(format!("d/p000{k}.json"));
        let out = tmp.path().join(format!("r{k}"));
        ok(&["route", s(&problem), "--sequencer", "ga", "--out", s(&out), "--svg"]);
        let sol: SolutionFile = serde_json::from_value(json(&out.join("solution.json"))).unwrap();
        let text = fs::read_to_string(out.join("route.svg")).unwrap();
        let doc = roxmltree::Document::parse(&text).unwrap();
        assert_eq!(doc.root_element().attribute("version"), Some("1.1"));
        let routed = sol.results.iter().filter(|r| !r.is_open()).count();
        assert_eq!(count_class(&doc, "polyline", "route"), routed);
        assert_eq!(count_class(&doc, "line", "open"), sol.results.len() - routed);
        assert_eq!(count_class(&doc, "rect", "bar"), sol.bars.len());
        assert_eq!(count_class(&doc, "rect", "unassigned"), sol.unassigned.len());

        // export-svg redraws the same document
        let again = tmp.path().join(format!("again{k}.svg"));
        ok(&["export-svg", s(&problem), s(&out.join("solution.json")), "--out", s(&again)]);
        assert_eq!(fs::read_to_string(&again).unwrap(), text);
    }
}

#[test]
fn empty_solution_renders_bars_only() {
    let tmp = TempDir::new().unwrap();
    ok(&["gen", "--count", "1", "--out", s(&tmp.path().join("d")), "--seed", "6"]);
    let problem = tmp.path().join("d/p0000.json");
    let out = tmp.path().join("r");
    ok(&["route", s(&problem), "--sequencer", "random", "--out", s(&out)]);
    let mut sol: SolutionFile = serde_json::from_value(json(&out.join("solution.json"))).unwrap();
    sol.pairs.clear();
    sol.results.clear();
    sol.order.clear();
    sol.unassigned.clear();
    let empty = tmp.path().join("empty.json");
    fs::write(&empty, serde_json::to_string(&sol).unwrap()).unwrap();
    let svg = tmp.path().join("empty.svg");
    ok(&["export-svg", s(&problem), s(&empty), "--out", s(&svg)]);
    let text = fs::read_to_string(&svg).unwrap();
    let doc = roxmltree::Document::parse(&text).unwrap();
    assert_eq!(count_class(&doc, "rect", "bar"), sol.bars.len());
    assert!(sol.bars.len() > 1);
    for (tag, class) in [("polyline", "route"), ("line", "open"), ("rect", "unassigned")] {
        assert_eq!(count_class(&doc, tag, class), 0);
    }
}

#[test]
fn exit_codes_classify_failures() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path().join("d");
    ok(&["gen", "--count", "1", "--out", s(&d)]);
    let problem = d.join("p0000.json");

    // usage
    assert_eq!(code(&["route"]), 1);
    assert_eq!(code(&["route", s(&problem), "--sequencer", "quantum"]), 1);
    assert_eq!(code(&["route", s(&problem), "--sequencer", "attention", "--out", s(&tmp.path().join("x"))]), 1);
    assert_eq!(code(&["gen", "--count", "0", "--out", s(&d)]), 1);
    assert_eq!(code(&["--help"]), 0);

    // data
    assert_eq!(code(&["route", s(&tmp.path().join("missing.json")), "--out", s(&tmp.path().join("x"))]), 2);
    let bad = tmp.path().join("bad.json");
    fs::write(&bad, "{\"name\": 3").unwrap();
    assert_eq!(code(&["route", s(&bad), "--out", s(&tmp.path().join("x"))]), 2);
    let overlap = tmp.path().join("overlap.json");
    fs::write(
        &overlap,
        r#"{"name":"o","wsp":{"rows":1,"width":10},"instterms":[
            {"id":0,"net":1,"kind":"SD","x1":0,"x2":4,"row":0},
            {"id":0,"net":2,"kind":"SD","x1":6,"x2":8,"row":0}]}"#,
    )
    .unwrap();
    assert_eq!(code(&["route", s(&overlap), "--out", s(&tmp.path().join("x"))]), 2);
    assert_eq!(code(&["train", s(&tmp.path().join("nowhere"))]), 2);

    // runtime: the output directory cannot be created under a regular file
    let blocked = problem.join("sub");
    assert_eq!(code(&["route", s(&problem), "--out", s(&blocked)]), 3);
}
