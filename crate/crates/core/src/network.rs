//! Road network model: nodes, links, logical addresses and the partition of a
//! network into transportation autonomous systems (TAS).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::routing::metric::{validate_specs, MetricKind, MetricSpec};

/// Metric names every network must declare.
pub const DISTANCE: &str = "distance";
pub const TIME: &str = "time";

macro_rules! id_type {
    ($(#[$meta:meta])* $name:ident, $prefix:literal) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub u32);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, concat!($prefix, "{}"), self.0)
            }
        }
    };
}

id_type!(NodeId, "n");
id_type!(LinkId, "l");
id_type!(TasId, "tas");
id_type!(VehicleId, "veh");

/// Automation and connectivity class of a vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VehicleClass {
    Human,
    DriverlessConnected,
    HumanConnected,
}

impl VehicleClass {
    pub fn is_connected(self) -> bool {
        !matches!(self, VehicleClass::Human)
    }

    pub fn is_driverless(self) -> bool {
        matches!(self, VehicleClass::DriverlessConnected)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NetworkError {
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("unknown link {0}")]
    UnknownLink(LinkId),
    #[error("unknown address {0}")]
    UnknownAddress(TransportAddress),
}

fn invalid(msg: impl Into<String>) -> NetworkError {
    NetworkError::Validation(msg.into())
}

/// Hierarchical logical address `tas.node.terminal`.
///
/// Terminal 0 addresses the node itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TransportAddress {
    pub tas: TasId,
    pub node: NodeId,
    pub terminal: u16,
}

impl fmt::Display for TransportAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}.{}", self.tas.0, self.node.0, self.terminal)
    }
}

/// Parses `tas.node` or `tas.node.terminal`.
impl std::str::FromStr for TransportAddress {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split('.').collect();
        let num = |x: &str| x.trim().parse::<u32>().map_err(|_| format!("bad address '{s}'"));
        match parts.as_slice() {
            [tas, node] | [tas, node, _] => Ok(Self {
                tas: TasId(num(tas)?),
                node: NodeId(num(node)?),
                terminal: match parts.get(2) {
                    Some(t) => u16::try_from(num(t)?).map_err(|_| format!("bad terminal in '{s}'"))?,
                    None => 0,
                },
            }),
            _ => Err(format!("bad address '{s}', expected tas.node[.terminal]")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Intersection,
    Inbound,
    Outbound,
    Bridge,
    Tunnel,
    Terminal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadNode {
    pub id: NodeId,
    pub kind: NodeKind,
    /// Planar position in meters.
    pub position: (f64, f64),
    pub metric_values: Vec<f64>,
    /// Number of addressable terminals (parking, stations) attached to the node.
    #[serde(default)]
    pub terminals: u16,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadLink {
    pub id: LinkId,
    pub from: NodeId,
    pub to: NodeId,
    /// Meters.
    pub length: f64,
    pub lane_count: u8,
    /// km/h.
    pub speed_limit: f64,
    pub metric_values: Vec<f64>,
}

impl RoadLink {
    pub fn speed_limit_mps(&self) -> f64 {
        self.speed_limit / 3.6
    }

    /// Free-flow traversal time in seconds.
    pub fn free_flow_time(&self) -> f64 {
        self.length / self.speed_limit_mps()
    }
}

/// Directed multigraph of road nodes and links with per-element metric vectors.
///
/// Immutable once built; all iteration is in id order.
#[derive(Debug, Clone, PartialEq)]
pub struct RoadGraph {
    specs: Vec<MetricSpec>,
    nodes: BTreeMap<NodeId, RoadNode>,
    links: BTreeMap<LinkId, RoadLink>,
    out_links: BTreeMap<NodeId, Vec<LinkId>>,
    in_links: BTreeMap<NodeId, Vec<LinkId>>,
}

impl RoadGraph {
    pub fn new(specs: Vec<MetricSpec>, nodes: Vec<RoadNode>, links: Vec<RoadLink>) -> Result<Self, NetworkError> {
        let mut node_map = BTreeMap::new();
        for node in nodes {
            let id = node.id;
            if node_map.insert(id, node).is_some() {
                return Err(invalid(format!("duplicate node id {id}")));
            }
        }
        let mut link_map = BTreeMap::new();
        for link in links {
            let id = link.id;
            if link_map.insert(id, link).is_some() {
                return Err(invalid(format!("duplicate link id {id}")));
            }
        }
        let mut graph = Self {
            specs,
            nodes: node_map,
            links: link_map,
            out_links: BTreeMap::new(),
            in_links: BTreeMap::new(),
        };
        graph.validate()?;
        graph.index();
        Ok(graph)
    }

    fn index(&mut self) {
        self.out_links = self.nodes.keys().map(|&n| (n, Vec::new())).collect();
        self.in_links = self.out_links.clone();
        // links iterate in id order, so adjacency lists come out sorted
        for link in self.links.values() {
            self.out_links.get_mut(&link.from).expect("validated").push(link.id);
            self.in_links.get_mut(&link.to).expect("validated").push(link.id);
        }
    }

    /// Checks every type invariant. Running it on a built graph is a no-op.
    pub fn validate(&self) -> Result<(), NetworkError> {
        validate_specs(&self.specs).map_err(NetworkError::Validation)?;
        let distance = self.metric_index(DISTANCE).ok_or_else(|| invalid("metric 'distance' is required"))?;
        self.metric_index(TIME).ok_or_else(|| invalid("metric 'time' is required"))?;
        let n = self.specs.len();
        for node in self.nodes.values() {
            if node.metric_values.len() != n {
                return Err(invalid(format!(
                    "node {} has {} metric values, expected {n}",
                    node.id,
                    node.metric_values.len()
                )));
            }
            self.check_values(&node.metric_values, &format!("node {}", node.id))?;
        }
        for link in self.links.values() {
            let what = format!("link {}", link.id);
            for end in [link.from, link.to] {
                if !self.nodes.contains_key(&end) {
                    return Err(invalid(format!("{what} references undefined node {end}")));
                }
            }
            if link.from == link.to {
                return Err(invalid(format!("{what} is a self-loop")));
            }
            if !(link.length > 0.0 && link.length.is_finite()) {
                return Err(invalid(format!("{what} has nonpositive length {}", link.length)));
            }
            if !(link.speed_limit > 0.0 && link.speed_limit.is_finite()) {
                return Err(invalid(format!("{what} has nonpositive speed limit {}", link.speed_limit)));
            }
            if link.lane_count == 0 {
                return Err(invalid(format!("{what} has no lanes")));
            }
            if link.metric_values.len() != n {
                return Err(invalid(format!(
                    "{what} has {} metric values, expected {n}",
                    link.metric_values.len()
                )));
            }
            self.check_values(&link.metric_values, &what)?;
            if link.metric_values[distance] != link.length {
                return Err(invalid(format!("{what} distance value differs from its length")));
            }
        }
        Ok(())
    }

    fn check_values(&self, values: &[f64], what: &str) -> Result<(), NetworkError> {
        for (spec, &v) in self.specs.iter().zip(values) {
            let ok = match spec.kind {
                MetricKind::Additive => v.is_finite() && v >= 0.0,
                MetricKind::Multiplicative => v.is_finite() && v >= 0.0,
                MetricKind::ConcaveMax | MetricKind::ConcaveMin => !v.is_nan(),
            };
            if !ok {
                return Err(invalid(format!("{what} has invalid value {v} for metric '{}'", spec.name)));
            }
        }
        Ok(())
    }

    pub fn specs(&self) -> &[MetricSpec] {
        &self.specs
    }

    pub fn metric_index(&self, name: &str) -> Option<usize> {
        self.specs.iter().position(|s| s.name == name)
    }

    pub fn node(&self, id: NodeId) -> Result<&RoadNode, NetworkError> {
        self.nodes.get(&id).ok_or(NetworkError::UnknownNode(id))
    }

    pub fn link(&self, id: LinkId) -> Result<&RoadLink, NetworkError> {
        self.links.get(&id).ok_or(NetworkError::UnknownLink(id))
    }

    pub fn contains_node(&self, id: NodeId) -> bool {
        self.nodes.contains_key(&id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &RoadNode> {
        self.nodes.values()
    }

    pub fn links(&self) -> impl Iterator<Item = &RoadLink> {
        self.links.values()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn link_count(&self) -> usize {
        self.links.len()
    }

    /// Out-links of `node` with their head node, in link-id order.
    pub fn neighbors(&self, node: NodeId) -> Result<Vec<(&RoadLink, NodeId)>, NetworkError> {
        let ids = self.out_links.get(&node).ok_or(NetworkError::UnknownNode(node))?;
        Ok(ids.iter().map(|id| {
            let link = &self.links[id];
            (link, link.to)
        }).collect())
    }

    pub fn out_link_ids(&self, node: NodeId) -> &[LinkId] {
        self.out_links.get(&node).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn in_link_ids(&self, node: NodeId) -> &[LinkId] {
        self.in_links.get(&node).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Link running in the opposite direction along the same road, if any.
    pub fn reverse_of(&self, link: LinkId) -> Option<LinkId> {
        let l = self.links.get(&link)?;
        self.out_link_ids(l.to).iter().copied().find(|id| self.links[id].to == l.from)
    }

    /// Subgraph induced by `keep`; metric values are copied unchanged.
    pub fn induced(&self, keep: &BTreeSet<NodeId>) -> RoadGraph {
        let nodes: BTreeMap<_, _> = self
            .nodes
            .iter()
            .filter(|(id, _)| keep.contains(id))
            .map(|(id, n)| (*id, n.clone()))
            .collect();
        let links: BTreeMap<_, _> = self
            .links
            .iter()
            .filter(|(_, l)| keep.contains(&l.from) && keep.contains(&l.to))
            .map(|(id, l)| (*id, l.clone()))
            .collect();
        let mut g = RoadGraph {
            specs: self.specs.clone(),
            nodes,
            links,
            out_links: BTreeMap::new(),
            in_links: BTreeMap::new(),
        };
        g.index();
        g
    }

    /// Copy of the graph with new metric values on one link.
    pub fn with_link_values(&self, link: LinkId, values: Vec<f64>) -> Result<RoadGraph, NetworkError> {
        let mut g = self.clone();
        let l = g.links.get_mut(&link).ok_or(NetworkError::UnknownLink(link))?;
        l.metric_values = values;
        g.validate()?;
        Ok(g)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TasKind {
    Stub,
    Transit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Tier {
    #[serde(rename = "LAN", alias = "lan")]
    Lan,
    #[serde(rename = "MAN", alias = "man")]
    Man,
    #[serde(rename = "WAN", alias = "wan")]
    Wan,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TasDescriptor {
    pub id: TasId,
    pub kind: TasKind,
    pub tier: Tier,
    pub member_nodes: BTreeSet<NodeId>,
    pub border_nodes: BTreeSet<NodeId>,
}

/// The network seen as areas joined by external links.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkHierarchy {
    pub areas: BTreeMap<TasId, TasDescriptor>,
    pub external_links: BTreeSet<LinkId>,
    node_tas: BTreeMap<NodeId, TasId>,
}

impl NetworkHierarchy {
    pub fn tas_of(&self, node: NodeId) -> Result<TasId, NetworkError> {
        self.node_tas.get(&node).copied().ok_or(NetworkError::UnknownNode(node))
    }

    pub fn is_external(&self, link: LinkId) -> bool {
        self.external_links.contains(&link)
    }

    pub fn address_of(&self, node: NodeId) -> Result<TransportAddress, NetworkError> {
        Ok(TransportAddress {
            tas: self.tas_of(node)?,
            node,
            terminal: 0,
        })
    }

    /// Resolves an address to its node. Fails unless the triple exists.
    pub fn resolve(&self, graph: &RoadGraph, addr: TransportAddress) -> Result<NodeId, NetworkError> {
        let unknown = NetworkError::UnknownAddress(addr);
        let node = graph.node(addr.node).map_err(|_| unknown.clone())?;
        if self.node_tas.get(&addr.node) != Some(&addr.tas) || addr.terminal > node.terminals {
            return Err(unknown);
        }
        Ok(addr.node)
    }

    /// Links whose endpoints both lie in `tas`.
    pub fn intra_links<'g>(&'g self, graph: &'g RoadGraph, tas: TasId) -> impl Iterator<Item = &'g RoadLink> + 'g {
        graph
            .links()
            .filter(move |l| self.node_tas.get(&l.from) == Some(&tas) && self.node_tas.get(&l.to) == Some(&tas))
    }

    /// True when the undirected quotient graph over areas is connected.
    pub fn quotient_connected(&self, graph: &RoadGraph) -> bool {
        let Some(&first) = self.areas.keys().next() else {
            return true;
        };
        let mut seen = BTreeSet::from([first]);
        let mut stack = vec![first];
        while let Some(t) = stack.pop() {
            for id in &self.external_links {
                let l = &graph.links[id];
                let (a, b) = (self.node_tas[&l.from], self.node_tas[&l.to]);
                for (x, y) in [(a, b), (b, a)] {
                    if x == t && seen.insert(y) {
                        stack.push(y);
                    }
                }
            }
        }
        seen.len() == self.areas.len()
    }
}

/// Splits the network into areas, computing border nodes and external links.
pub fn partition_into_tas(
    graph: &RoadGraph,
    assignment: &BTreeMap<NodeId, TasId>,
    kinds: &BTreeMap<TasId, (TasKind, Tier)>,
) -> Result<NetworkHierarchy, NetworkError> {
    let mut areas: BTreeMap<TasId, TasDescriptor> = kinds
        .iter()
        .map(|(&id, &(kind, tier))| {
            (id, TasDescriptor {
                id,
                kind,
                tier,
                member_nodes: BTreeSet::new(),
                border_nodes: BTreeSet::new(),
            })
        })
        .collect();
    for node in graph.nodes() {
        let tas = assignment
            .get(&node.id)
            .ok_or_else(|| invalid(format!("node {} has no TAS assignment", node.id)))?;
        areas
            .get_mut(tas)
            .ok_or_else(|| invalid(format!("node {} assigned to undeclared TAS {}", node.id, tas.0)))?
            .member_nodes
            .insert(node.id);
    }
    let node_tas: BTreeMap<NodeId, TasId> = graph.nodes().map(|n| (n.id, assignment[&n.id])).collect();
    let mut external_links = BTreeSet::new();
    for link in graph.links() {
        let (a, b) = (node_tas[&link.from], node_tas[&link.to]);
        if a != b {
            external_links.insert(link.id);
            areas.get_mut(&a).expect("declared").border_nodes.insert(link.from);
            areas.get_mut(&b).expect("declared").border_nodes.insert(link.to);
        }
    }
    for area in areas.values() {
        if area.member_nodes.is_empty() {
            return Err(invalid(format!("TAS {} has no member nodes", area.id.0)));
        }
        if area.kind == TasKind::Stub
            && !area
                .member_nodes
                .iter()
                .any(|n| graph.nodes[n].kind == NodeKind::Terminal || graph.nodes[n].terminals > 0)
        {
            return Err(invalid(format!("stub TAS {} contains no terminal", area.id.0)));
        }
    }
    Ok(NetworkHierarchy {
        areas,
        external_links,
        node_tas,
    })
}

/// Builds a link whose `distance` and `time` values are derived from its
/// geometry; remaining metrics take the kind's identity value.
pub fn derived_link(
    specs: &[MetricSpec],
    id: LinkId,
    from: NodeId,
    to: NodeId,
    length: f64,
    lane_count: u8,
    speed_limit: f64,
) -> RoadLink {
    let mut link = RoadLink {
        id,
        from,
        to,
        length,
        lane_count,
        speed_limit,
        metric_values: Vec::new(),
    };
    link.metric_values = specs
        .iter()
        .map(|s| match s.name.as_str() {
            DISTANCE => length,
            TIME => link.free_flow_time(),
            _ => s.kind.identity(),
        })
        .collect();
    link
}

/// Node with identity metric values.
pub fn plain_node(specs: &[MetricSpec], id: NodeId, kind: NodeKind, position: (f64, f64)) -> RoadNode {
    RoadNode {
        id,
        kind,
        position,
        metric_values: specs.iter().map(|s| s.kind.identity()).collect(),
        terminals: 0,
    }
}
