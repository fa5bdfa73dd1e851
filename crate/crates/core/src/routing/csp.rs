//! Exact constrained (QoS) routing by label setting with Pareto dominance.
//!
//! A label is a simple partial path from the source together with its
//! running metric accumulators. A label dominates another at the same node
//! when it is at least as good on the objective and on every constrained
//! metric, its visited-node set is a subset of the other's (so every
//! completion of the other is also open to it), and, on a full tie, its node
//! sequence is lexicographically smaller. Dominated labels are discarded;
//! everything else is extended, which keeps the search exact over simple
//! paths.

use std::collections::{BTreeMap, VecDeque};

use super::metric::Accumulator;
use super::{build_topology_snapshot, reachable, Criteria, Dominance, Path, RouteRequest, RoutingError};
use crate::network::{LinkId, NodeId, RoadGraph};

/// Fixed-width visited set over dense node indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Visited(Vec<u64>);

impl Visited {
    pub fn new(len: usize) -> Self {
        Self(vec![0; len.div_ceil(64).max(1)])
    }

    pub fn insert(&mut self, i: usize) {
        self.0[i / 64] |= 1 << (i % 64);
    }

    pub fn contains(&self, i: usize) -> bool {
        self.0[i / 64] & (1 << (i % 64)) != 0
    }

    pub fn is_subset(&self, other: &Self) -> bool {
        self.0.iter().zip(&other.0).all(|(a, b)| a & !b == 0)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Label {
    pub node: NodeId,
    pub acc: Accumulator,
    pub nodes: Vec<NodeId>,
    pub links: Vec<LinkId>,
    pub visited: Visited,
    pub alive: bool,
}

impl Label {
    /// True if `self` makes `other` redundant.
    pub fn dominates(&self, other: &Label, criteria: &Criteria<'_>) -> bool {
        if !self.visited.is_subset(&other.visited) {
            return false;
        }
        match criteria.compare(&self.acc, &other.acc) {
            Dominance::Better => true,
            Dominance::Equal => Path::seq_cmp(&self.nodes, &self.links, &other.nodes, &other.links).is_le(),
            Dominance::Worse | Dominance::Incomparable => false,
        }
    }
}

/// Keeps the per-node Pareto sets. Returns the index of the inserted label,
/// or `None` if an existing label dominates it.
pub(crate) fn insert_label(
    labels: &mut Vec<Label>,
    bucket: &mut Vec<usize>,
    label: Label,
    criteria: &Criteria<'_>,
) -> Option<usize> {
    if bucket.iter().any(|&i| labels[i].alive && labels[i].dominates(&label, criteria)) {
        return None;
    }
    for &i in bucket.iter() {
        if labels[i].alive && label.dominates(&labels[i], criteria) {
            labels[i].alive = false;
        }
    }
    bucket.retain(|&i| labels[i].alive);
    labels.push(label);
    let idx = labels.len() - 1;
    bucket.push(idx);
    Some(idx)
}

/// Picks the best feasible label: objective first, then smallest sequence.
pub(crate) fn best_label<'l>(
    candidates: impl Iterator<Item = &'l Label>,
    criteria: &Criteria<'_>,
) -> Option<&'l Label> {
    let k = criteria.objective.metric;
    candidates
        .filter(|l| criteria.feasible(&l.acc))
        .min_by(|a, b| {
            criteria
                .objective
                .compare(a.acc.value(criteria.specs, k), b.acc.value(criteria.specs, k))
                .then_with(|| Path::seq_cmp(&a.nodes, &a.links, &b.nodes, &b.links))
        })
}

/// Optimal simple path for the request's objective subject to all of its
/// constraints. `Infeasible` means the destination is reachable but every
/// path violates some bound.
pub fn constrained_route(graph: &RoadGraph, request: &RouteRequest) -> Result<Path, RoutingError> {
    request.check(graph)?;
    let snapshot;
    let graph = match request.horizon {
        Some(h) => {
            snapshot = build_topology_snapshot(graph, request.source, h)?;
            &snapshot
        }
        None => graph,
    };
    let (s, t) = (request.source, request.destination);
    if !graph.contains_node(t) || !reachable(graph, s, t) {
        return Err(RoutingError::NoRoute(s, t));
    }
    let specs = graph.specs();
    let criteria = Criteria::new(specs, request);
    criteria.check_objective(graph)?;

    let dense: BTreeMap<NodeId, usize> = graph.nodes().enumerate().map(|(i, n)| (n.id, i)).collect();
    let mut acc = Accumulator::new(specs);
    acc.push_node(specs, &graph.node(s)?.metric_values);
    let mut visited = Visited::new(dense.len());
    visited.insert(dense[&s]);

    let mut labels = Vec::new();
    let mut buckets: BTreeMap<NodeId, Vec<usize>> = BTreeMap::new();
    let mut queue = VecDeque::new();
    let start = Label {
        node: s,
        acc,
        nodes: vec![s],
        links: Vec::new(),
        visited,
        alive: true,
    };
    if let Some(i) = insert_label(&mut labels, buckets.entry(s).or_default(), start, &criteria) {
        queue.push_back(i);
    }

    while let Some(i) = queue.pop_front() {
        if !labels[i].alive || labels[i].node == t {
            continue;
        }
        let u = labels[i].node;
        for (link, v) in graph.neighbors(u)? {
            let vi = dense[&v];
            if labels[i].visited.contains(vi) {
                continue;
            }
            let parent = &labels[i];
            let mut acc = parent.acc.clone();
            acc.push_edge(specs, &link.metric_values);
            acc.push_node(specs, &graph.node(v)?.metric_values);
            if criteria.hopeless(&acc) {
                continue;
            }
            let mut nodes = parent.nodes.clone();
            nodes.push(v);
            let mut links = parent.links.clone();
            links.push(link.id);
            let mut visited = parent.visited.clone();
            visited.insert(vi);
            let label = Label {
                node: v,
                acc,
                nodes,
                links,
                visited,
                alive: true,
            };
            if let Some(j) = insert_label(&mut labels, buckets.entry(v).or_default(), label, &criteria) {
                queue.push_back(j);
            }
        }
    }

    let at_target = buckets.get(&t).into_iter().flatten().map(|&i| &labels[i]).filter(|l| l.alive);
    let best = best_label(at_target, &criteria).ok_or(RoutingError::Infeasible(s, t))?;
    Path::from_links(graph, s, &best.links)
}
