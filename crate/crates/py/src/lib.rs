//! Python bindings. Scenario arguments are TOML documents (see `fixture`);
//! overrides are `{"sim.vehicles": "200"}` style dictionaries.

use std::collections::BTreeMap;

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use tisim_core::fixtures;
use tisim_core::network::NodeId;
use tisim_core::queueing::{self, QueueError, ServiceModel};
use tisim_core::routing::{self, Constraint, Direction, Objective, RouteRequest, RoutingError};
use tisim_core::scenario::{Scenario, ScenarioError};
use tisim_core::sim::{self, Mode, SimError, Simulation};

create_exception!(tisim, NoRouteError, PyException, "No path joins the two nodes.");
create_exception!(tisim, InfeasibleError, PyException, "Every path violates a constraint.");
create_exception!(tisim, UnstableQueueError, PyException, "Arrival rate at or above service rate.");
create_exception!(tisim, SimulationError, PyException, "A simulation run failed.");

fn scenario_err(e: ScenarioError) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn routing_err(e: RoutingError) -> PyErr {
    match e {
        RoutingError::NoRoute(..) => NoRouteError::new_err(e.to_string()),
        RoutingError::Infeasible(..) => InfeasibleError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn queue_err(e: QueueError) -> PyErr {
    match e {
        QueueError::UnstableQueue { .. } => UnstableQueueError::new_err(e.to_string()),
        QueueError::BadRate => PyValueError::new_err(e.to_string()),
    }
}

fn sim_err(e: SimError) -> PyErr {
    match e {
        SimError::Config(_) | SimError::Overcrowded { .. } => PyValueError::new_err(e.to_string()),
        _ => SimulationError::new_err(e.to_string()),
    }
}

fn load(scenario: &str, overrides: Option<BTreeMap<String, String>>) -> PyResult<Scenario> {
    let overrides: Vec<(String, String)> = overrides.unwrap_or_default().into_iter().collect();
    Scenario::from_toml_with(scenario, &overrides).map_err(scenario_err)
}

fn model(name: &str) -> PyResult<ServiceModel> {
    name.parse().map_err(PyValueError::new_err)
}

/// A computed route.
#[pyclass(get_all, frozen, skip_from_py_object)]
#[derive(Debug, Clone)]
pub struct Route {
    pub nodes: Vec<u32>,
    pub links: Vec<u32>,
    /// Metric name to path value.
    pub values: BTreeMap<String, f64>,
}

/// Text of a bundled scenario.
#[pyfunction]
pub fn fixture(name: &str) -> PyResult<String> {
    fixtures::by_name(name)
        .map(str::to_string)
        .ok_or_else(|| PyValueError::new_err(format!("unknown fixture '{name}'")))
}

/// `"N nodes, L links, T TAS, S signals"`.
#[pyfunction]
#[pyo3(signature = (scenario, overrides = None))]
pub fn summary(scenario: &str, overrides: Option<BTreeMap<String, String>>) -> PyResult<String> {
    Ok(load(scenario, overrides)?.summary())
}

/// Optimal route from `source` to `destination`. Constraints are
/// `(metric, "<=" | ">=", bound)` triples; the objective follows the
/// metric's declared direction.
#[pyfunction]
#[pyo3(signature = (scenario, source, destination, objective = None, constraints = Vec::new(), hierarchical = false))]
pub fn route(
    scenario: &str,
    source: u32,
    destination: u32,
    objective: Option<&str>,
    constraints: Vec<(String, String, f64)>,
    hierarchical: bool,
) -> PyResult<Route> {
    let sc = load(scenario, None)?;
    let graph = &sc.graph;
    let index = |name: &str| {
        graph
            .metric_index(name)
            .ok_or_else(|| PyValueError::new_err(format!("unknown metric '{name}'")))
    };
    let k = objective.map(index).transpose()?.unwrap_or(0);
    let objective = match graph.specs()[k].direction {
        Direction::Minimize => Objective::minimize(k),
        Direction::Maximize => Objective::maximize(k),
    };
    let mut request = RouteRequest::new(NodeId(source), NodeId(destination), objective);
    for (name, op, bound) in &constraints {
        let m = index(name)?;
        request = request.with_constraint(match op.as_str() {
            "<=" => Constraint::at_most(m, *bound),
            ">=" => Constraint::at_least(m, *bound),
            other => return Err(PyValueError::new_err(format!("bad operator '{other}'"))),
        });
    }
    let path = if hierarchical {
        routing::hierarchical_route(&sc.hierarchy, graph, &request)
    } else {
        routing::constrained_route(graph, &request)
    }
    .map_err(routing_err)?;
    Ok(Route {
        nodes: path.nodes.iter().map(|n| n.0).collect(),
        links: path.links.iter().map(|l| l.0).collect(),
        values: graph.specs().iter().map(|s| s.name.clone()).zip(path.values).collect(),
    })
}

/// Analytic mean wait in queue for `"mm1"` or `"md1"`.
#[pyfunction]
pub fn expected_wait(model_name: &str, arrival_rate: f64, service_rate: f64) -> PyResult<f64> {
    queueing::expected_wait(model(model_name)?, arrival_rate, service_rate).map_err(queue_err)
}

/// Discrete-event estimate of the same quantity.
#[pyfunction]
#[pyo3(signature = (model_name, arrival_rate, service_rate, arrivals = 1_000_000, seed = 1))]
pub fn simulate_wait(model_name: &str, arrival_rate: f64, service_rate: f64, arrivals: u64, seed: u64) -> PyResult<f64> {
    queueing::simulate_wait(model(model_name)?, arrival_rate, service_rate, arrivals, seed)
        .map(|w| w.mean_wait)
        .map_err(queue_err)
}

/// One run. Returns `(interval, mean_speed_kmh or None)` pairs.
#[pyfunction]
#[pyo3(signature = (scenario, controlled = true, fraction = 0.0, seed = None, overrides = None))]
pub fn simulate(
    scenario: &str,
    controlled: bool,
    fraction: f64,
    seed: Option<u64>,
    overrides: Option<BTreeMap<String, String>>,
) -> PyResult<Vec<(u64, Option<f64>)>> {
    let sc = load(scenario, overrides)?;
    let mut config = sc.sim.clone();
    config.seed = seed.unwrap_or(config.seed);
    let mode = if controlled { Mode::Controlled } else { Mode::Baseline };
    let mut run = Simulation::with_config(&sc, config, mode, fraction).map_err(sim_err)?;
    let m = run.run().map_err(sim_err)?;
    Ok(m.iter().map(|m| (m.interval, m.mean_speed_kmh)).collect())
}

/// AV-share sweep in both modes. Returns the run table and summary table
/// as CSV text.
#[pyfunction]
#[pyo3(signature = (scenario, fractions, replications, threads = 1, overrides = None))]
pub fn experiment(
    scenario: &str,
    fractions: Vec<f64>,
    replications: u32,
    threads: usize,
    overrides: Option<BTreeMap<String, String>>,
) -> PyResult<(String, String)> {
    let sc = load(scenario, overrides)?;
    let result = sim::run_experiment(&sc, &fractions, replications, threads).map_err(sim_err)?;
    Ok((result.runs_csv().map_err(sim_err)?, result.summary_csv().map_err(sim_err)?))
}

#[pymodule(name = "tisim")]
mod tisim_module {
    use super::*;

    #[pymodule_export]
    use super::{experiment, expected_wait, fixture, route, simulate, simulate_wait, summary, Route};

    #[pymodule_init]
    fn init(m: &Bound<'_, PyModule>) -> PyResult<()> {
        let py = m.py();
        m.add("NoRouteError", py.get_type::<NoRouteError>())?;
        m.add("InfeasibleError", py.get_type::<InfeasibleError>())?;
        m.add("UnstableQueueError", py.get_type::<UnstableQueueError>())?;
        m.add("SimulationError", py.get_type::<SimulationError>())?;
        Ok(())
    }
}
