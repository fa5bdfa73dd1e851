//! Scenario documents.
//!
//! A scenario is one TOML file:
//!
//! ```toml
//! version = 1
//! name = "example"
//!
//! [[metrics]]            # index = position; "distance" and "time" required
//! name = "distance"
//! kind = "additive"      # additive | multiplicative | concave_max | concave_min
//! direction = "minimize"
//!
//! [[nodes]]
//! id = 0
//! kind = "intersection"  # intersection | inbound | outbound | bridge | tunnel | terminal
//! position = [0.0, 0.0]
//! values = [0.0, 0.0]    # optional, identity per metric when absent
//! terminals = 0
//!
//! [[links]]
//! id = 0
//! from = 0
//! to = 1
//! length = 100.0         # meters
//! lanes = 1
//! speed_limit = 60.0     # km/h
//! values = [100.0, 6.0]  # optional, distance/time derived from geometry when absent
//!
//! [[tas]]                # optional, one transit TAS holding every node when absent
//! id = 1
//! kind = "stub"
//! tier = "LAN"
//! nodes = [0, 1]
//!
//! [[signals]]
//! node = 1
//! offset = 0.0
//! [[signals.phases]]
//! id = 1
//! green = 30.0
//! yellow = 5.0
//! red = 30.0
//! through = true         # every through movement, and/or
//! movements = [[0, 1]]   # every connection from link 0 onto link 1
//!
//! [[loops]]              # closed circulation routes for the simulator
//! links = [0, 1, 2]
//!
//! [sim]                  # see SimConfig
//! [control]              # see ControlConfig
//! [experiment]           # see ExperimentConfig
//! ```

use std::collections::{BTreeMap, BTreeSet};

use serde::Deserialize;
use thiserror::Error;

use crate::fabric::{ConnectionId, Movement, SwitchFabric};
use crate::network::{
    derived_link, partition_into_tas, LinkId, NetworkHierarchy, NodeId, NodeKind, RoadGraph, RoadLink, RoadNode,
    TasId, TasKind, Tier,
};
use crate::routing::{Direction, MetricKind, MetricSpec};
use crate::sdt::{Phase, SignalPlan};
use crate::sim::{ControlConfig, ExperimentConfig, SimConfig};

pub const SCENARIO_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScenarioError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("unknown override key '{0}'")]
    UnknownKey(String),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Doc {
    version: u32,
    #[serde(default)]
    name: String,
    metrics: Vec<MetricDoc>,
    nodes: Vec<NodeDoc>,
    #[serde(default)]
    links: Vec<LinkDoc>,
    #[serde(default)]
    tas: Vec<TasDoc>,
    #[serde(default)]
    signals: Vec<SignalDoc>,
    #[serde(default)]
    loops: Vec<LoopDoc>,
    #[serde(default)]
    sim: SimConfig,
    #[serde(default)]
    control: ControlConfig,
    #[serde(default)]
    experiment: ExperimentConfig,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MetricDoc {
    name: String,
    kind: MetricKind,
    direction: Direction,
}

fn default_kind() -> NodeKind {
    NodeKind::Intersection
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeDoc {
    id: u32,
    #[serde(default = "default_kind")]
    kind: NodeKind,
    #[serde(default)]
    position: [f64; 2],
    values: Option<Vec<f64>>,
    #[serde(default)]
    terminals: u16,
}

fn one() -> u8 {
    1
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LinkDoc {
    id: u32,
    from: u32,
    to: u32,
    length: f64,
    #[serde(default = "one")]
    lanes: u8,
    speed_limit: f64,
    values: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TasDoc {
    id: u32,
    kind: TasKind,
    tier: Tier,
    nodes: Vec<u32>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SignalDoc {
    node: u32,
    #[serde(default)]
    offset: f64,
    phases: Vec<PhaseDoc>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PhaseDoc {
    id: u32,
    green: f64,
    #[serde(default)]
    yellow: f64,
    #[serde(default)]
    red: f64,
    #[serde(default)]
    through: bool,
    #[serde(default)]
    movements: Vec<[u32; 2]>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LoopDoc {
    links: Vec<u32>,
}

/// A loaded, validated scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub graph: RoadGraph,
    pub hierarchy: NetworkHierarchy,
    /// Fabrics of every intersection node whose geometry supports one.
    pub fabrics: BTreeMap<NodeId, SwitchFabric>,
    pub signals: BTreeMap<NodeId, SignalPlan>,
    /// Closed circulation routes.
    pub loops: Vec<Vec<LinkId>>,
    pub sim: SimConfig,
    pub control: ControlConfig,
    pub experiment: ExperimentConfig,
}

fn invalid(m: impl Into<String>) -> ScenarioError {
    ScenarioError::Validation(m.into())
}

/// Parses a `key=value` override value the way TOML would, falling back
/// to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn known_section_keys() -> BTreeMap<&'static str, BTreeSet<String>> {
    let keys = |v: toml::Value| -> BTreeSet<String> {
        v.as_table().map(|t| t.keys().cloned().collect()).unwrap_or_default()
    };
    BTreeMap::from([
        ("sim", keys(toml::Value::try_from(SimConfig::default()).expect("serializable"))),
        ("control", keys(toml::Value::try_from(ControlConfig::default()).expect("serializable"))),
        ("experiment", keys(toml::Value::try_from(ExperimentConfig::default()).expect("serializable"))),
    ])
}

/// Applies dotted `key=value` overrides to a parsed document. Keys must name
/// a simulation, control or experiment parameter, or a scalar already
/// present at the top level.
pub fn apply_overrides(doc: &mut toml::Table, overrides: &[(String, String)]) -> Result<(), ScenarioError> {
    let known = known_section_keys();
    for (key, raw) in overrides {
        let value = parse_value(raw);
        match key.split_once('.') {
            Some((section, field)) if known.get(section).is_some_and(|k| k.contains(field)) => {
                let table = doc
                    .entry(section.to_string())
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()));
                let table = table.as_table_mut().ok_or_else(|| invalid(format!("'{section}' is not a table")))?;
                table.insert(field.to_string(), value);
            }
            None if doc.get(key.as_str()).is_some_and(|v| !v.is_table() && !v.is_array()) => {
                doc.insert(key.clone(), value);
            }
            _ => return Err(ScenarioError::UnknownKey(key.clone())),
        }
    }
    Ok(())
}

/// Splits `key=value` strings.
pub fn parse_override(s: &str) -> Result<(String, String), ScenarioError> {
    s.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .filter(|(k, _)| !k.is_empty())
        .ok_or_else(|| ScenarioError::UnknownKey(s.to_string()))
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        Self::from_toml_with(text, &[])
    }

    pub fn from_toml_with(text: &str, overrides: &[(String, String)]) -> Result<Self, ScenarioError> {
        if text.trim().is_empty() {
            return Err(ScenarioError::Parse("empty document".into()));
        }
        let mut table: toml::Table = toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        apply_overrides(&mut table, overrides)?;
        let doc: Doc = table.try_into().map_err(|e: toml::de::Error| ScenarioError::Parse(e.to_string()))?;
        Self::build(doc)
    }

    fn build(doc: Doc) -> Result<Self, ScenarioError> {
        if doc.version != SCENARIO_VERSION {
            return Err(invalid(format!("unsupported scenario version {}", doc.version)));
        }
        let specs: Vec<MetricSpec> = doc
            .metrics
            .iter()
            .enumerate()
            .map(|(i, m)| MetricSpec::new(i, m.name.clone(), m.kind, m.direction))
            .collect();
        let nodes: Vec<RoadNode> = doc
            .nodes
            .iter()
            .map(|n| RoadNode {
                id: NodeId(n.id),
                kind: n.kind,
                position: (n.position[0], n.position[1]),
                metric_values: n
                    .values
                    .clone()
                    .unwrap_or_else(|| specs.iter().map(|s| s.kind.identity()).collect()),
                terminals: n.terminals,
            })
            .collect();
        let mut seen = BTreeSet::new();
        for n in &nodes {
            if !seen.insert(n.id) {
                return Err(invalid(format!("duplicate node id {}", n.id)));
            }
        }
        let mut seen = BTreeSet::new();
        let links: Vec<RoadLink> = doc
            .links
            .iter()
            .map(|l| {
                if !seen.insert(l.id) {
                    return Err(invalid(format!("duplicate link id {}", LinkId(l.id))));
                }
                let mut link = derived_link(&specs, LinkId(l.id), NodeId(l.from), NodeId(l.to), l.length, l.lanes, l.speed_limit);
                if let Some(v) = &l.values {
                    link.metric_values = v.clone();
                }
                Ok(link)
            })
            .collect::<Result<_, _>>()?;
        let graph = RoadGraph::new(specs, nodes, links).map_err(|e| invalid(e.to_string()))?;

        let (assignment, kinds) = if doc.tas.is_empty() {
            let all: BTreeMap<NodeId, TasId> = graph.nodes().map(|n| (n.id, TasId(1))).collect();
            (all, BTreeMap::from([(TasId(1), (TasKind::Transit, Tier::Lan))]))
        } else {
            let mut assignment = BTreeMap::new();
            let mut kinds = BTreeMap::new();
            for t in &doc.tas {
                if kinds.insert(TasId(t.id), (t.kind, t.tier)).is_some() {
                    return Err(invalid(format!("duplicate TAS id {}", t.id)));
                }
                for n in &t.nodes {
                    if assignment.insert(NodeId(*n), TasId(t.id)).is_some() {
                        return Err(invalid(format!("node {} assigned to two TAS", NodeId(*n))));
                    }
                    if !graph.contains_node(NodeId(*n)) {
                        return Err(invalid(format!("TAS {} lists undefined node {}", t.id, NodeId(*n))));
                    }
                }
            }
            (assignment, kinds)
        };
        let hierarchy = partition_into_tas(&graph, &assignment, &kinds).map_err(|e| invalid(e.to_string()))?;

        let mut fabrics = BTreeMap::new();
        for n in graph.nodes().filter(|n| n.kind == NodeKind::Intersection) {
            if graph.in_link_ids(n.id).is_empty() || graph.out_link_ids(n.id).is_empty() {
                continue;
            }
            if let Ok(f) = SwitchFabric::for_node(&graph, n.id, false) {
                fabrics.insert(n.id, f);
            }
        }

        let mut signals = BTreeMap::new();
        for s in &doc.signals {
            let node = NodeId(s.node);
            let fabric = fabrics
                .get_mut(&node)
                .ok_or_else(|| invalid(format!("signal at {node}, which is not an intersection with a fabric")))?;
            let mut phases = Vec::new();
            for p in &s.phases {
                let mut connections: BTreeSet<ConnectionId> = BTreeSet::new();
                if p.through {
                    connections.extend(fabric.connections_with(Movement::Through));
                }
                for [from, to] in &p.movements {
                    let matched: Vec<ConnectionId> = fabric
                        .connections
                        .iter()
                        .filter(|c| {
                            fabric.ports[c.in_port.0 as usize].lane.link == LinkId(*from)
                                && fabric.ports[c.out_port.0 as usize].lane.link == LinkId(*to)
                        })
                        .map(|c| c.id)
                        .collect();
                    if matched.is_empty() {
                        return Err(invalid(format!(
                            "signal at {node} phase {}: no movement from {} onto {}",
                            p.id,
                            LinkId(*from),
                            LinkId(*to)
                        )));
                    }
                    connections.extend(matched);
                }
                phases.push(Phase {
                    id: p.id,
                    connections: connections.into_iter().collect(),
                    green: p.green,
                    yellow: p.yellow,
                    red: p.red,
                });
            }
            let plan = SignalPlan {
                intersection: node,
                cycle_length: phases.iter().map(Phase::duration).sum(),
                phases,
                offset: s.offset,
            };
            plan.validate(Some(fabric)).map_err(|e| invalid(e.to_string()))?;
            fabric.signalized = true;
            if signals.insert(node, plan).is_some() {
                return Err(invalid(format!("two signal plans at {node}")));
            }
        }

        let mut loops = Vec::new();
        for (i, l) in doc.loops.iter().enumerate() {
            let links: Vec<LinkId> = l.links.iter().map(|x| LinkId(*x)).collect();
            if links.is_empty() {
                return Err(invalid(format!("loop {i} is empty")));
            }
            for (k, id) in links.iter().enumerate() {
                let a = graph.link(*id).map_err(|e| invalid(format!("loop {i}: {e}")))?;
                let b = graph.link(links[(k + 1) % links.len()]).map_err(|e| invalid(format!("loop {i}: {e}")))?;
                if a.to != b.from {
                    return Err(invalid(format!("loop {i}: {} does not continue onto {}", a.id, b.id)));
                }
            }
            loops.push(links);
        }

        doc.sim.validate().map_err(|e| invalid(e.to_string()))?;
        Ok(Self {
            name: doc.name,
            graph,
            hierarchy,
            fabrics,
            signals,
            loops,
            sim: doc.sim,
            control: doc.control,
            experiment: doc.experiment,
        })
    }

    /// One-line summary used by `validate`.
    pub fn summary(&self) -> String {
        format!(
            "{} nodes, {} links, {} TAS, {} signals",
            self.graph.node_count(),
            self.graph.link_count(),
            self.hierarchy.areas.len(),
            self.signals.len()
        )
    }

    /// Total lane cells of the network at the configured cell length.
    pub fn lane_cells(&self) -> usize {
        self.graph
            .links()
            .map(|l| crate::sim::cells_for(l.length, self.sim.cell_length) * l.lane_count as usize)
            .sum()
    }
}
