//! Best-effort routing: Dijkstra on one additive metric.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BinaryHeap};

use serde::{Deserialize, Serialize};

use super::{build_topology_snapshot, MetricKind, Objective, Path, RouteRequest, RoutingError};
use crate::network::{LinkId, NodeId, RoadGraph};
use super::metric::Direction;

#[derive(Debug, Clone)]
struct Entry {
    nodes_sum: f64,
    edges_sum: f64,
    nodes: Vec<NodeId>,
    links: Vec<LinkId>,
}

impl Entry {
    fn key(&self) -> f64 {
        self.nodes_sum + self.edges_sum
    }
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key()
            .total_cmp(&other.key())
            .then_with(|| Path::seq_cmp(&self.nodes, &self.links, &other.nodes, &other.links))
    }
}

fn check_additive(graph: &RoadGraph, metric: usize) -> Result<(), RoutingError> {
    let spec = &graph.specs()[metric];
    if spec.kind != MetricKind::Additive {
        return Err(RoutingError::Precondition(format!(
            "best-effort routing needs an additive objective, '{}' is {:?}",
            spec.name, spec.kind
        )));
    }
    let negative = graph
        .nodes()
        .map(|n| n.metric_values[metric])
        .chain(graph.links().map(|l| l.metric_values[metric]))
        .any(|v| v < 0.0);
    if negative {
        return Err(RoutingError::Precondition(format!("metric '{}' has negative values", spec.name)));
    }
    Ok(())
}

/// Shortest-path tree from `source` on additive `metric`. Among equal-value
/// paths the lexicographically smallest node (then link) sequence wins.
fn shortest_tree(
    graph: &RoadGraph,
    source: NodeId,
    metric: usize,
    stop_at: Option<NodeId>,
) -> Result<BTreeMap<NodeId, (Vec<NodeId>, Vec<LinkId>)>, RoutingError> {
    let mut settled = BTreeMap::new();
    let mut heap = BinaryHeap::new();
    heap.push(Reverse(Entry {
        nodes_sum: graph.node(source)?.metric_values[metric],
        edges_sum: 0.0,
        nodes: vec![source],
        links: Vec::new(),
    }));
    while let Some(Reverse(entry)) = heap.pop() {
        let u = *entry.nodes.last().expect("nonempty");
        if settled.contains_key(&u) {
            continue;
        }
        for (link, v) in graph.neighbors(u)? {
            if settled.contains_key(&v) {
                continue;
            }
            let mut nodes = entry.nodes.clone();
            nodes.push(v);
            let mut links = entry.links.clone();
            links.push(link.id);
            heap.push(Reverse(Entry {
                nodes_sum: entry.nodes_sum + graph.node(v)?.metric_values[metric],
                edges_sum: entry.edges_sum + link.metric_values[metric],
                nodes,
                links,
            }));
        }
        settled.insert(u, (entry.nodes, entry.links));
        if stop_at == Some(u) {
            break;
        }
    }
    Ok(settled)
}

/// Unconstrained shortest path for a minimized additive objective.
pub fn best_effort_route(graph: &RoadGraph, request: &RouteRequest) -> Result<Path, RoutingError> {
    request.check(graph)?;
    if !request.constraints.is_empty() {
        return Err(RoutingError::Precondition("best-effort routing takes no constraints".into()));
    }
    if request.objective.direction != Direction::Minimize {
        return Err(RoutingError::Precondition("best-effort routing minimizes its objective".into()));
    }
    let snapshot;
    let graph = match request.horizon {
        Some(h) => {
            snapshot = build_topology_snapshot(graph, request.source, h)?;
            &snapshot
        }
        None => graph,
    };
    if !graph.contains_node(request.destination) {
        return Err(RoutingError::NoRoute(request.source, request.destination));
    }
    check_additive(graph, request.objective.metric)?;
    let tree = shortest_tree(graph, request.source, request.objective.metric, Some(request.destination))?;
    let (_, links) = tree
        .get(&request.destination)
        .ok_or(RoutingError::NoRoute(request.source, request.destination))?;
    Path::from_links(graph, request.source, links)
}

/// One row of a router's forwarding table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteRecord {
    pub node: NodeId,
    pub destination: NodeId,
    pub next_hop: Option<LinkId>,
    pub values: Vec<f64>,
}

/// Best-effort routes from `node` to every reachable destination.
pub fn routing_table(graph: &RoadGraph, node: NodeId, objective: Objective) -> Result<Vec<RouteRecord>, RoutingError> {
    if objective.direction != Direction::Minimize {
        return Err(RoutingError::Precondition("routing tables minimize their objective".into()));
    }
    check_additive(graph, objective.metric)?;
    let tree = shortest_tree(graph, node, objective.metric, None)?;
    tree.into_iter()
        .filter(|(dest, _)| *dest != node)
        .map(|(destination, (_, links))| {
            let path = Path::from_links(graph, node, &links)?;
            Ok(RouteRecord {
                node,
                destination,
                next_hop: links.first().copied(),
                values: path.values,
            })
        })
        .collect()
}
