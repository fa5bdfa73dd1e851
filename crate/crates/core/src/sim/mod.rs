//! Cellular-automaton traffic simulation.
//!
//! Each lane of each link is a row of cells. Vehicles follow the
//! Nagel–Schreckenberg rule (accelerate, gap limit, random slowdown for
//! human drivers, move). A vehicle may leave its link only through a
//! movement its downstream intersection grants this tick. Driverless
//! vehicles following another connected driverless vehicle anticipate the
//! leader's move, which lets platoons run at short headways.

mod config;
mod experiment;
mod runner;
mod state;

pub use config::{ControlConfig, ExperimentConfig, SimConfig};
pub use experiment::{run_experiment, ExperimentResult, RunRecord, RunSummary, SummaryRow};
pub use runner::{Audit, Mode, Simulation};
pub use state::{init_scenario, Measurement, SimState, Vehicle};

use thiserror::Error;

use crate::network::{LinkId, NodeId, RoadGraph, VehicleId};
use crate::routing::{best_effort_route, Objective, RouteRequest};
use crate::scenario::Scenario;
use crate::sdt::SdtError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("bad configuration: {0}")]
    Config(String),
    #[error("{vehicles} vehicles do not fit in {cells} cells")]
    Overcrowded { vehicles: usize, cells: usize },
    #[error("no signal at {0}")]
    UnknownSignal(NodeId),
    #[error("vehicle {0} has no route onward from {1}")]
    RouteExhausted(VehicleId, LinkId),
    #[error(transparent)]
    Control(#[from] SdtError),
}

/// Number of cells a link of `length` meters holds (at least one).
pub fn cells_for(length: f64, cell_length: f64) -> usize {
    ((length / cell_length).round() as usize).max(1)
}

/// Shortest route (by `metric`) from the end of `link` to `destination`.
/// Fabrics have no U-turn connections, so turning straight back is ruled out
/// where the node has one. Simple paths never revisit a node, so only the
/// first step needs the check.
pub(crate) fn onward_route(
    scenario: &Scenario,
    graph: &RoadGraph,
    link: LinkId,
    destination: NodeId,
    metric: usize,
) -> Option<Vec<LinkId>> {
    let from = graph.link(link).ok()?.to;
    let back = graph.reverse_of(link).filter(|_| scenario.fabrics.contains_key(&from));
    let penalized = match back {
        Some(b) => {
            let mut values = graph.link(b).ok()?.metric_values.clone();
            values[metric] += 1e12;
            Some(graph.with_link_values(b, values).ok()?)
        }
        None => None,
    };
    let request = RouteRequest::new(from, destination, Objective::minimize(metric));
    let path = best_effort_route(penalized.as_ref().unwrap_or(graph), &request).ok()?;
    if back.is_some() && path.links.first() == back.as_ref() {
        return None;
    }
    Some(path.links)
}
