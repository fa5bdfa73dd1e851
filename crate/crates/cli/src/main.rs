//! `tisim`: load scenarios, route, simulate, run AV-share experiments and
//! check queue formulas.
//!
//! Exit codes: 0 success, 1 I/O or runtime failure, 2 invalid input,
//! 3 no route, 4 constraints infeasible, 5 unstable queue.

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tisim_core::fixtures;
use tisim_core::network::{NodeId, TransportAddress};
use tisim_core::queueing::{expected_wait, simulate_wait, QueueError, ServiceModel};
use tisim_core::routing::{constrained_route, hierarchical_route, Constraint, Direction, Objective, RouteRequest, RoutingError};
use tisim_core::scenario::{parse_override, Scenario, ScenarioError};
use tisim_core::sim::{run_experiment, Mode, RunRecord, SimError, Simulation};

#[derive(Parser)]
#[command(name = "tisim", version, about = "Transportation network simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a scenario and print its size.
    Validate(Source),
    /// Compute a route between two nodes or addresses.
    Route(RouteArgs),
    /// Run one simulation and write its interval table.
    Simulate(SimulateArgs),
    /// Sweep AV fractions in both modes and write run and summary tables.
    Experiment(ExperimentArgs),
    /// Print the conflict matrix of an intersection.
    ConflictMatrix(MatrixArgs),
    /// Mean queueing delay of an M/M/1 or M/D/1 server.
    QueueCalc(QueueArgs),
}

#[derive(Args)]
struct Source {
    /// Scenario file (TOML).
    #[arg(long, required_unless_present = "fixture", conflicts_with = "fixture")]
    scenario: Option<PathBuf>,
    /// Bundled scenario: four_arm, demo, yuhangtang, three_tas or ring_road.
    #[arg(long)]
    fixture: Option<String>,
    /// Parameter override, repeatable (e.g. sim.vehicles=200).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct RouteArgs {
    #[command(flatten)]
    source: Source,
    /// Node id (`3`, `n3`) or address (`tas.node[.terminal]`).
    #[arg(long)]
    from: String,
    #[arg(long)]
    to: String,
    /// Metric to optimize; defaults to the first declared metric.
    #[arg(long)]
    objective: Option<String>,
    /// Maximize the objective instead of following its declared direction.
    #[arg(long, conflicts_with = "minimize")]
    maximize: bool,
    #[arg(long)]
    minimize: bool,
    /// Bound such as `time<=300` or `limit>=13.9`, repeatable.
    #[arg(long = "constraint", value_name = "METRIC<=BOUND")]
    constraints: Vec<String>,
    /// Use the area hierarchy instead of the flat solver.
    #[arg(long)]
    hierarchical: bool,
}

#[derive(Args)]
struct ModeFlags {
    /// Run with controllers active (default).
    #[arg(long, conflicts_with = "baseline")]
    controlled: bool,
    /// Fixed-time signals and static routes.
    #[arg(long)]
    baseline: bool,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    source: Source,
    #[command(flatten)]
    mode: ModeFlags,
    /// Share of driverless vehicles.
    #[arg(long, default_value_t = 0.0)]
    fraction: f64,
    #[arg(long)]
    seed: Option<u64>,
    /// Interval table (CSV).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    #[command(flatten)]
    source: Source,
    /// Comma-separated AV fractions; defaults to the scenario's.
    #[arg(long, value_delimiter = ',')]
    fractions: Option<Vec<f64>>,
    #[arg(long)]
    replications: Option<u32>,
    /// First seed; replication r uses seed + r.
    #[arg(long)]
    seed: Option<u64>,
    /// Run table path; the summary goes next to it as `<stem>.summary.csv`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MatrixArgs {
    #[command(flatten)]
    source: Source,
    /// Intersection node; may be omitted when the scenario has one fabric.
    #[arg(long)]
    node: Option<String>,
    /// Also write the matrix text here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
#[command(allow_negative_numbers = true)]
struct QueueArgs {
    /// mm1 or md1
    model: ServiceModel,
    /// Arrival rate.
    lambda: f64,
    /// Service rate.
    mu: f64,
    /// Also run a discrete-event simulation.
    #[arg(long)]
    simulate: bool,
    #[arg(long, default_value_t = 1_000_000)]
    arrivals: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Display) -> Self {
        Self {
            code,
            message: message.to_string(),
        }
    }

    fn io(path: &Path, e: impl Display) -> Self {
        Self::new(1, format!("{}: {e}", path.display()))
    }

    fn invalid(message: impl Display) -> Self {
        Self::new(2, message)
    }
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        Self::invalid(e)
    }
}

impl From<RoutingError> for Failure {
    fn from(e: RoutingError) -> Self {
        let code = match e {
            RoutingError::NoRoute(..) => 3,
            RoutingError::Infeasible(..) => 4,
            _ => 2,
        };
        Self::new(code, e)
    }
}

impl From<QueueError> for Failure {
    fn from(e: QueueError) -> Self {
        let code = match e {
            QueueError::UnstableQueue { .. } => 5,
            QueueError::BadRate => 2,
        };
        Self::new(code, e)
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        let code = match e {
            SimError::Config(_) | SimError::Overcrowded { .. } => 2,
            _ => 1,
        };
        Self::new(code, e)
    }
}

type Outcome = Result<(), Failure>;

fn load(source: &Source) -> Result<Scenario, Failure> {
    let text = match (&source.scenario, &source.fixture) {
        (Some(path), _) => fs::read_to_string(path).map_err(|e| Failure::io(path, e))?,
        (None, Some(name)) => fixtures::by_name(name)
            .ok_or_else(|| Failure::invalid(format!("unknown fixture '{name}'")))?
            .to_string(),
        (None, None) => return Err(Failure::invalid("no scenario given")),
    };
    let overrides = source
        .overrides
        .iter()
        .map(|s| parse_override(s))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Scenario::from_toml_with(&text, &overrides)?)
}

fn write(path: &Path, contents: &str) -> Outcome {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Failure::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Failure::io(path, e))
}

fn parse_node(scenario: &Scenario, s: &str) -> Result<NodeId, Failure> {
    let id = if s.contains('.') {
        let addr: TransportAddress = s.parse().map_err(Failure::invalid)?;
        scenario
            .hierarchy
            .resolve(&scenario.graph, addr)
            .map_err(Failure::invalid)?
    } else {
        let digits = s.strip_prefix('n').unwrap_or(s);
        NodeId(digits.parse().map_err(|_| Failure::invalid(format!("bad node '{s}'")))?)
    };
    scenario.graph.node(id).map_err(Failure::invalid)?;
    Ok(id)
}

fn metric(scenario: &Scenario, name: &str) -> Result<usize, Failure> {
    scenario
        .graph
        .metric_index(name)
        .ok_or_else(|| Failure::invalid(format!("unknown metric '{name}'")))
}

fn parse_constraint(scenario: &Scenario, s: &str) -> Result<Constraint, Failure> {
    let (name, bound, at_most) = if let Some((n, b)) = s.split_once("<=") {
        (n, b, true)
    } else if let Some((n, b)) = s.split_once(">=") {
        (n, b, false)
    } else {
        return Err(Failure::invalid(format!("bad constraint '{s}', expected METRIC<=BOUND or METRIC>=BOUND")));
    };
    let k = metric(scenario, name.trim())?;
    let bound: f64 = bound
        .trim()
        .parse()
        .map_err(|_| Failure::invalid(format!("bad bound in '{s}'")))?;
    Ok(if at_most { Constraint::at_most(k, bound) } else { Constraint::at_least(k, bound) })
}

fn validate(source: &Source) -> Outcome {
    let scenario = load(source)?;
    println!("{}", scenario.summary());
    Ok(())
}

fn route(args: &RouteArgs) -> Outcome {
    let scenario = load(&args.source)?;
    let graph = &scenario.graph;
    let k = match &args.objective {
        Some(name) => metric(&scenario, name)?,
        None => 0,
    };
    let direction = if args.maximize {
        Direction::Maximize
    } else if args.minimize {
        Direction::Minimize
    } else {
        graph.specs()[k].direction
    };
    let (s, t) = (parse_node(&scenario, &args.from)?, parse_node(&scenario, &args.to)?);
    let mut request = RouteRequest::new(s, t, Objective { metric: k, direction });
    for c in &args.constraints {
        request = request.with_constraint(parse_constraint(&scenario, c)?);
    }
    let path = if args.hierarchical {
        hierarchical_route(&scenario.hierarchy, graph, &request)?
    } else {
        constrained_route(graph, &request)?
    };
    let nodes: Vec<String> = path.nodes.iter().map(ToString::to_string).collect();
    if path.links.is_empty() {
        println!("path: {} (empty)", nodes.join(" -> "));
    } else {
        println!("path: {}", nodes.join(" -> "));
    }
    for (spec, value) in graph.specs().iter().zip(&path.values) {
        println!("{} = {value}", spec.name);
    }
    Ok(())
}

fn mode(flags: &ModeFlags) -> Mode {
    if flags.baseline {
        Mode::Baseline
    } else {
        Mode::Controlled
    }
}

fn records_csv(rows: &[RunRecord]) -> Result<String, Failure> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Failure::new(1, e))?;
    }
    let bytes = w.into_inner().map_err(|e| Failure::new(1, e))?;
    String::from_utf8(bytes).map_err(|e| Failure::new(1, e))
}

fn simulate(args: &SimulateArgs) -> Outcome {
    let scenario = load(&args.source)?;
    let mut config = scenario.sim.clone();
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let mode = mode(&args.mode);
    let mut sim = Simulation::with_config(&scenario, config.clone(), mode, args.fraction)?;
    let measurements = sim.run()?.to_vec();
    let audit = sim.audit();
    let records: Vec<RunRecord> = measurements
        .iter()
        .map(|m| RunRecord {
            fraction: args.fraction,
            mode,
            seed: config.seed,
            interval: m.interval,
            mean_speed_kmh: m.mean_speed_kmh,
        })
        .collect();
    if let Some(out) = &args.out {
        write(out, &records_csv(&records)?)?;
    }
    let defined: Vec<f64> = measurements.iter().filter_map(|m| m.mean_speed_kmh).collect();
    println!(
        "{} {mode}, AV fraction {}, seed {}: {} intervals",
        scenario.name,
        args.fraction,
        config.seed,
        measurements.len()
    );
    if defined.is_empty() {
        println!("mean speed: undefined (no vehicle observed)");
    } else {
        println!("mean speed: {:.2} km/h", defined.iter().sum::<f64>() / defined.len() as f64);
    }
    println!(
        "audit: {} ticks, {} conservation, {} double occupancy, {} red crossings, {} speed violations",
        audit.ticks, audit.conservation_violations, audit.double_occupancy, audit.red_crossings, audit.speed_violations
    );
    Ok(())
}

fn threads() -> usize {
    let available = std::thread::available_parallelism().map_or(1, |n| n.get());
    std::env::var("TISIM_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|n| *n > 0)
        .map_or(available, |cap| cap.min(available))
}

fn summary_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map_or_else(|| "experiment".into(), |s| s.to_string_lossy().into_owned());
    out.with_file_name(format!("{stem}.summary.csv"))
}

fn experiment(args: &ExperimentArgs) -> Outcome {
    let mut scenario = load(&args.source)?;
    if let Some(seed) = args.seed {
        scenario.sim.seed = seed;
    }
    let fractions = args.fractions.clone().unwrap_or_else(|| scenario.experiment.fractions.clone());
    let replications = args.replications.unwrap_or(scenario.experiment.replications);
    let result = run_experiment(&scenario, &fractions, replications, threads())?;
    let dirty = result.runs.iter().filter(|r| !r.audit.is_clean()).count();
    write(&args.out, &result.runs_csv()?)?;
    let summary = summary_path(&args.out);
    write(&summary, &result.summary_csv()?)?;
    println!("{}: {} runs, {replications} replications per fraction and mode", scenario.name, result.runs.len());
    for row in &result.summary {
        println!(
            "AV {:>5.1}%: baseline {:.2} km/h, controlled {:.2} km/h, improvement {:+.2}% (sd {:.2})",
            row.fraction * 100.0,
            row.baseline_kmh,
            row.controlled_kmh,
            row.improvement_pct,
            row.improvement_std
        );
    }
    if dirty > 0 {
        println!("warning: {dirty} runs reported invariant violations");
    }
    println!("wrote {} and {}", args.out.display(), summary.display());
    Ok(())
}

fn conflict_matrix(args: &MatrixArgs) -> Outcome {
    let scenario = load(&args.source)?;
    let node = match &args.node {
        Some(s) => parse_node(&scenario, s)?,
        None if scenario.fabrics.len() == 1 => *scenario.fabrics.keys().next().expect("one fabric"),
        None => return Err(Failure::invalid("scenario has several intersections; pass --node")),
    };
    let fabric = scenario
        .fabrics
        .get(&node)
        .ok_or_else(|| Failure::invalid(format!("{node} has no intersection fabric")))?;
    let text = fabric.conflicts.to_text();
    println!("{node}: {} connections (0 none, 1 cross, 2 merge, 3 diverge)", fabric.connections.len());
    for c in &fabric.connections {
        println!("  c{}: p{} -> p{} {:?}", c.id.0, c.in_port.0, c.out_port.0, c.movement);
    }
    print!("{text}");
    if let Some(out) = &args.out {
        write(out, &text)?;
    }
    Ok(())
}

fn queue_calc(args: &QueueArgs) -> Outcome {
    let analytic = expected_wait(args.model, args.lambda, args.mu)?;
    println!("W_q = {analytic:?}");
    if args.simulate {
        let sim = simulate_wait(args.model, args.lambda, args.mu, args.arrivals, args.seed)?;
        let error = if analytic == 0.0 { 0.0 } else { (sim.mean_wait - analytic).abs() / analytic };
        println!("simulated W_q = {} over {} customers", sim.mean_wait, sim.served);
        println!("relative error = {:.3}%", error * 100.0);
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Validate(s) => validate(s),
        Command::Route(a) => route(a),
        Command::Simulate(a) => simulate(a),
        Command::Experiment(a) => experiment(a),
        Command::ConflictMatrix(a) => conflict_matrix(a),
        Command::QueueCalc(a) => queue_calc(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
