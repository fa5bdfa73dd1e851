use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tisim_core::fixtures;
use tisim_core::network::NodeId;
use tisim_core::routing::{constrained_route, Constraint, Objective, RouteRequest};
use tisim_core::scenario::Scenario;

fn tisim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tisim")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

/// Two nodes joined by one one-way link.
const ONE_WAY: &str = r#"
version = 1
[[metrics]]
name = "distance"
kind = "additive"
direction = "minimize"
[[metrics]]
name = "time"
kind = "additive"
direction = "minimize"
[[nodes]]
id = 0
position = [0.0, 0.0]
[[nodes]]
id = 1
position = [100.0, 0.0]
[[links]]
id = 0
from = 0
to = 1
length = 100.0
speed_limit = 50.0
"#;

#[test]
fn validate_reports_corridor_counts() {
    let o = tisim(&["validate", "--fixture", "yuhangtang"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(stdout(&o).trim(), "7 nodes, 12 links, 1 TAS, 5 signals");

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("corridor.toml");
    fs::write(&path, fixtures::YUHANGTANG).unwrap();
    let o = tisim(&["validate", "--scenario", path.to_str().unwrap()]);
    assert_eq!(stdout(&o).trim(), "7 nodes, 12 links, 1 TAS, 5 signals");
}

#[test]
fn validate_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.toml");
    fs::write(&empty, "").unwrap();
    let o = tisim(&["validate", "--scenario", empty.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("parse error"), "{}", stderr(&o));

    // link 0 carries one value where two metrics are declared
    let arity = dir.path().join("arity.toml");
    fs::write(&arity, format!("{ONE_WAY}values = [100.0]\n")).unwrap();
    let o = tisim(&["validate", "--scenario", arity.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("l0"), "{}", stderr(&o));

    let o = tisim(&["validate", "--scenario", dir.path().join("missing.toml").to_str().unwrap()]);
    assert_eq!(code(&o), 1);

    let o = tisim(&["validate", "--fixture", "demo", "--set", "sim.no_such_key=3"]);
    assert_eq!(code(&o), 2);
}

fn values(out: &str) -> BTreeMap<String, String> {
    out.lines()
        .filter_map(|l| l.split_once(" = "))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

#[test]
fn route_to_self_is_empty_with_identity_values() {
    // terminal 0 has identity node values
    let o = tisim(&["route", "--fixture", "demo", "--from", "0", "--to", "n0"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("path: n0 (empty)"), "{out}");
    let v = values(&out);
    assert_eq!(v["distance"], "0");
    assert_eq!(v["time"], "0");
    assert_eq!(v["limit"], "inf");

    // a one-node path still carries that node's own delay
    let o = tisim(&["route", "--fixture", "demo", "--from", "3", "--to", "3"]);
    assert_eq!(values(&stdout(&o))["time"], "5");
}

#[test]
fn route_matches_the_library() {
    let sc = Scenario::from_toml(fixtures::DEMO).unwrap();
    let time = sc.graph.metric_index("time").unwrap();
    let req = RouteRequest::new(NodeId(0), NodeId(6), Objective::minimize(0)).with_constraint(Constraint::at_most(time, 300.0));
    let expected = constrained_route(&sc.graph, &req).unwrap();

    let o = tisim(&["route", "--fixture", "demo", "--from", "0", "--to", "6", "--constraint", "time<=300"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = stdout(&o);
    let nodes: Vec<String> = expected.nodes.iter().map(ToString::to_string).collect();
    assert!(out.contains(&format!("path: {}", nodes.join(" -> "))), "{out}");
    let v = values(&out);
    for (spec, x) in sc.graph.specs().iter().zip(&expected.values) {
        assert_eq!(v[&spec.name].parse::<f64>().unwrap(), *x, "{}", spec.name);
    }
}

#[test]
fn route_error_codes() {
    let o = tisim(&["route", "--fixture", "demo", "--from", "0", "--to", "6", "--constraint", "time<=1"]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("one_way.toml");
    fs::write(&path, ONE_WAY).unwrap();
    let o = tisim(&["route", "--scenario", path.to_str().unwrap(), "--from", "1", "--to", "0"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));

    let o = tisim(&["route", "--fixture", "demo", "--from", "0", "--to", "99"]);
    assert_eq!(code(&o), 2);
    let o = tisim(&["route", "--fixture", "demo", "--from", "0", "--to", "6", "--objective", "bogus"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn flat_and_hierarchical_agree_on_the_chain() {
    let sc = Scenario::from_toml(fixtures::THREE_TAS).unwrap();
    let ids: Vec<u32> = sc.graph.nodes().map(|n| n.id.0).collect();
    let (first, last) = (ids[0].to_string(), ids[ids.len() - 1].to_string());
    for metric in sc.graph.specs().iter().map(|s| s.name.clone()) {
        let run = |extra: &[&str]| {
            let mut args = vec!["route", "--fixture", "three_tas", "--from", &first, "--to", &last, "--objective", &metric];
            args.extend_from_slice(extra);
            let o = tisim(&args);
            assert_eq!(code(&o), 0, "{}", stderr(&o));
            values(&stdout(&o))
        };
        assert_eq!(run(&[]), run(&["--hierarchical"]), "{metric}");
    }
}

#[test]
fn route_accepts_addresses() {
    let sc = Scenario::from_toml(fixtures::THREE_TAS).unwrap();
    let ids: Vec<NodeId> = sc.graph.nodes().map(|n| n.id).collect();
    let (s, t) = (ids[0], ids[ids.len() - 1]);
    let (a, b) = (sc.hierarchy.address_of(s).unwrap(), sc.hierarchy.address_of(t).unwrap());
    let by_id = tisim(&["route", "--fixture", "three_tas", "--from", &s.0.to_string(), "--to", &t.0.to_string()]);
    let by_addr = tisim(&["route", "--fixture", "three_tas", "--from", &a.to_string(), "--to", &b.to_string()]);
    assert_eq!(code(&by_addr), 0, "{}", stderr(&by_addr));
    assert_eq!(stdout(&by_id), stdout(&by_addr));
}

#[test]
fn queue_calc_examples() {
    let o = tisim(&["queue-calc", "mm1", "0.5", "1"]);
    assert_eq!(code(&o), 0);
    assert_eq!(stdout(&o).lines().next(), Some("W_q = 1.0"));
    let o = tisim(&["queue-calc", "md1", "0.5", "1"]);
    assert_eq!(stdout(&o).lines().next(), Some("W_q = 0.5"));
    let o = tisim(&["queue-calc", "mm1", "1", "1"]);
    assert_eq!(code(&o), 5);
    let o = tisim(&["queue-calc", "md1", "-1", "1"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn queue_calc_simulation_lands_within_five_percent() {
    for (model, expected) in [("mm1", 1.0), ("md1", 0.5)] {
        let o = tisim(&["queue-calc", model, "0.5", "1", "--simulate", "--arrivals", "200000", "--seed", "7"]);
        assert_eq!(code(&o), 0);
        let out = stdout(&o);
        let sim: f64 = out
            .lines()
            .find_map(|l| l.strip_prefix("simulated W_q = "))
            .and_then(|r| r.split_whitespace().next())
            .unwrap()
            .parse()
            .unwrap();
        assert!((sim - expected).abs() / expected < 0.05, "{model}: {sim}");
        assert!(out.contains("relative error = "));
    }
}

#[test]
fn conflict_matrix_of_the_four_arm_fixture() {
    let sc = Scenario::from_toml(fixtures::FOUR_ARM).unwrap();
    let fabric = sc.fabrics.values().next().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("m.txt");
    let o = tisim(&["conflict-matrix", "--fixture", "four_arm", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(fs::read_to_string(&out).unwrap(), fabric.conflicts.to_text());
    assert!(stdout(&o).ends_with(&fabric.conflicts.to_text()));

    let o = tisim(&["conflict-matrix", "--fixture", "yuhangtang"]);
    assert_eq!(code(&o), 2);
}

const SHORT: [&str; 6] = ["--set", "sim.warmup=50", "--set", "sim.duration=200", "--set", "sim.measure_interval=100"];

#[test]
fn simulate_writes_interval_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run.csv");
    let mut args = vec!["simulate", "--fixture", "ring_road", "--baseline", "--fraction", "0.2", "--seed", "3", "--out", out.to_str().unwrap()];
    args.extend_from_slice(&SHORT);
    let o = tisim(&args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "fraction,mode,seed,interval,mean_speed_kmh");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("0.2,baseline,3,0,"), "{}", lines[1]);
    assert!(stdout(&o).contains("0 conservation, 0 double occupancy, 0 red crossings"));

    let o = tisim(&["simulate", "--fixture", "ring_road", "--set", "sim.vehicles=100000"]);
    assert_eq!(code(&o), 2);
}

fn experiment(dir: &Path, name: &str, threads: &str) -> (Output, String, String) {
    let out = dir.join(name);
    let mut args = vec!["experiment", "--fixture", "ring_road", "--fractions", "0,0.2,0.6", "--replications", "2", "--seed", "5", "--out", out.to_str().unwrap()];
    args.extend_from_slice(&SHORT);
    let o = Command::new(env!("CARGO_BIN_EXE_tisim"))
        .args(&args)
        .env("TISIM_THREADS", threads)
        .output()
        .unwrap();
    let summary = out.with_file_name(format!("{}.summary.csv", out.file_stem().unwrap().to_str().unwrap()));
    let runs = fs::read_to_string(&out).unwrap_or_default();
    let summary = fs::read_to_string(summary).unwrap_or_default();
    (o, runs, summary)
}

#[test]
fn experiment_tables_are_reproducible_and_consistent() {
    let dir = tempfile::tempdir().unwrap();
    let (o, runs, summary) = experiment(dir.path(), "a.csv", "1");
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (o2, runs2, summary2) = experiment(dir.path(), "b.csv", "4");
    assert_eq!(code(&o2), 0);
    assert_eq!(runs, runs2);
    assert_eq!(summary, summary2);

    let rows: Vec<&str> = summary.lines().collect();
    assert_eq!(rows.len(), 4, "{summary}");
    let header: Vec<&str> = rows[0].split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name).unwrap();

    // independent aggregation of the run table: per-run mean of defined
    // intervals, then mean over seeds per fraction and mode
    let mut per_run: BTreeMap<(String, String, String), Vec<f64>> = BTreeMap::new();
    for line in runs.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if let Ok(v) = f[4].parse::<f64>() {
            per_run.entry((f[0].into(), f[1].into(), f[2].into())).or_default().push(v);
        }
    }
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let mode_mean = |fraction: &str, mode: &str| {
        let runs: Vec<f64> = per_run
            .iter()
            .filter(|((f, m, _), _)| f == fraction && m == mode)
            .map(|(_, v)| mean(v))
            .collect();
        mean(&runs)
    };
    let printed = stdout(&o);
    for row in &rows[1..] {
        let f: Vec<&str> = row.split(',').collect();
        let fraction = f[col("fraction")];
        let (b, c) = (mode_mean(fraction, "baseline"), mode_mean(fraction, "controlled"));
        let improvement = (c - b) / b * 100.0;
        let reported: f64 = f[col("improvement_pct")].parse().unwrap();
        assert!((reported - improvement).abs() < 1e-9, "{fraction}: {reported} vs {improvement}");
        let pct = format!("AV {:>5.1}%", fraction.parse::<f64>().unwrap() * 100.0);
        assert!(printed.contains(&format!("{pct}: baseline")), "{printed}");
        assert!(printed.contains(&format!("improvement {improvement:+.2}%")), "{printed}");
    }
}

#[test]
fn experiment_rejects_bad_fractions_and_unwritable_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.csv");
    let o = tisim(&["experiment", "--fixture", "ring_road", "--fractions", "1.5", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 2);

    // a regular file where a directory is needed
    let blocker = dir.path().join("file");
    fs::write(&blocker, "").unwrap();
    let out = blocker.join("x.csv");
    let mut args = vec!["experiment", "--fixture", "ring_road", "--fractions", "0", "--replications", "1", "--out", out.to_str().unwrap()];
    args.extend_from_slice(&SHORT);
    let o = tisim(&args);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
}
