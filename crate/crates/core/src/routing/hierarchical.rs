//! Two-level routing across transportation autonomous systems.
//!
//! Each TAS is abstracted by border-to-border summaries: the best intra-TAS
//! path between an entry and an exit for one objective metric. The top level
//! searches over external links and summary arcs, visiting every TAS at most
//! once, and the chosen summaries are then expanded into their concrete
//! intra-domain segments. Constraints are enforced end to end.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use super::csp::{best_label, insert_label, Label, Visited};
use super::metric::{Accumulator, MetricKind};
use super::{best_effort_route, constrained_route, Criteria, Direction, Objective, Path, RouteRequest, RoutingError};
use crate::network::{NetworkHierarchy, NodeId, RoadGraph, TasId};

/// Best intra-domain path between two nodes of one TAS subgraph.
pub(crate) fn intra_segment(tas_graph: &RoadGraph, a: NodeId, b: NodeId, objective: Objective) -> Option<Path> {
    let request = RouteRequest::new(a, b, objective);
    let spec = &tas_graph.specs()[objective.metric];
    let result = if spec.kind == MetricKind::Additive && objective.direction == Direction::Minimize {
        best_effort_route(tas_graph, &request)
    } else {
        constrained_route(tas_graph, &request)
    };
    result.ok()
}

/// Border-to-border summaries of every TAS, one per (entry, exit, metric),
/// each optimizing that metric in its declared direction.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TasSummaries {
    entries: BTreeMap<(TasId, NodeId, NodeId, usize), Path>,
}

impl TasSummaries {
    pub fn compute(graph: &RoadGraph, hierarchy: &NetworkHierarchy) -> Self {
        let mut entries = BTreeMap::new();
        for tas in hierarchy.areas.keys() {
            entries.extend(Self::compute_area(graph, hierarchy, *tas).entries);
        }
        Self { entries }
    }

    pub fn compute_area(graph: &RoadGraph, hierarchy: &NetworkHierarchy, tas: TasId) -> Self {
        let area = &hierarchy.areas[&tas];
        let sub = graph.induced(&area.member_nodes);
        let mut entries = BTreeMap::new();
        for &a in &area.border_nodes {
            for &b in &area.border_nodes {
                if a == b {
                    continue;
                }
                for spec in graph.specs() {
                    let objective = Objective {
                        metric: spec.index,
                        direction: spec.direction,
                    };
                    if let Some(path) = intra_segment(&sub, a, b, objective) {
                        entries.insert((tas, a, b, spec.index), path);
                    }
                }
            }
        }
        Self { entries }
    }

    pub fn get(&self, tas: TasId, entry: NodeId, exit: NodeId, metric: usize) -> Option<&Path> {
        self.entries.get(&(tas, entry, exit, metric))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(TasId, NodeId, NodeId, usize), &Path)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

struct TopLevel<'a> {
    graph: &'a RoadGraph,
    hierarchy: &'a NetworkHierarchy,
    objective: Objective,
    areas: BTreeMap<TasId, RoadGraph>,
    tas_index: BTreeMap<TasId, usize>,
    segments: BTreeMap<(NodeId, NodeId), Option<Path>>,
}

impl<'a> TopLevel<'a> {
    fn new(graph: &'a RoadGraph, hierarchy: &'a NetworkHierarchy, objective: Objective) -> Self {
        let areas = hierarchy
            .areas
            .iter()
            .map(|(id, a)| (*id, graph.induced(&a.member_nodes)))
            .collect();
        let tas_index = hierarchy.areas.keys().enumerate().map(|(i, t)| (*t, i)).collect();
        Self {
            graph,
            hierarchy,
            objective,
            areas,
            tas_index,
            segments: BTreeMap::new(),
        }
    }

    fn segment(&mut self, tas: TasId, a: NodeId, b: NodeId) -> Option<Path> {
        let (areas, objective) = (&self.areas, self.objective);
        self.segments
            .entry((a, b))
            .or_insert_with(|| intra_segment(&areas[&tas], a, b, objective))
            .clone()
    }

    /// Nodes of `tas` from which traffic may leave it (plus `t` if inside).
    fn exits(&self, tas: TasId, t: NodeId) -> BTreeSet<NodeId> {
        let mut out: BTreeSet<NodeId> = self.hierarchy.areas[&tas]
            .border_nodes
            .iter()
            .copied()
            .filter(|&b| {
                self.graph
                    .out_link_ids(b)
                    .iter()
                    .any(|l| self.hierarchy.is_external(*l))
            })
            .collect();
        if self.hierarchy.tas_of(t).ok() == Some(tas) {
            out.insert(t);
        }
        out
    }

    fn search(&mut self, request: &RouteRequest) -> Result<Option<Vec<crate::network::LinkId>>, RoutingError> {
        let graph = self.graph;
        let specs = graph.specs();
        let criteria = Criteria::new(specs, request);
        let (s, t) = (request.source, request.destination);

        let mut acc = Accumulator::new(specs);
        acc.push_node(specs, &graph.node(s)?.metric_values);
        let mut visited = Visited::new(self.tas_index.len());
        visited.insert(self.tas_index[&self.hierarchy.tas_of(s)?]);

        // Labels are bucketed by (node, arrived through a summary arc).
        let mut labels: Vec<Label> = Vec::new();
        let mut buckets: BTreeMap<(NodeId, bool), Vec<usize>> = BTreeMap::new();
        let mut queue = VecDeque::new();
        let start = Label {
            node: s,
            acc,
            nodes: vec![s],
            links: Vec::new(),
            visited,
            alive: true,
        };
        if let Some(i) = insert_label(&mut labels, buckets.entry((s, false)).or_default(), start, &criteria) {
            queue.push_back((i, false));
        }

        while let Some((i, via_summary)) = queue.pop_front() {
            if !labels[i].alive || labels[i].node == t {
                continue;
            }
            let u = labels[i].node;
            let tas = self.hierarchy.tas_of(u)?;
            let mut next: Vec<(Label, bool)> = Vec::new();

            if !via_summary {
                for b in self.exits(tas, t) {
                    if b == u {
                        continue;
                    }
                    let Some(seg) = self.segment(tas, u, b) else { continue };
                    let parent = &labels[i];
                    let mut acc = parent.acc.clone();
                    for (link, node) in seg.links.iter().zip(&seg.nodes[1..]) {
                        acc.push_edge(specs, &graph.link(*link)?.metric_values);
                        acc.push_node(specs, &graph.node(*node)?.metric_values);
                    }
                    let mut nodes = parent.nodes.clone();
                    nodes.extend_from_slice(&seg.nodes[1..]);
                    let mut links = parent.links.clone();
                    links.extend_from_slice(&seg.links);
                    next.push((
                        Label {
                            node: b,
                            acc,
                            nodes,
                            links,
                            visited: parent.visited.clone(),
                            alive: true,
                        },
                        true,
                    ));
                }
            }

            for (link, v) in graph.neighbors(u)? {
                if !self.hierarchy.is_external(link.id) {
                    continue;
                }
                let ti = self.tas_index[&self.hierarchy.tas_of(v)?];
                let parent = &labels[i];
                if parent.visited.contains(ti) {
                    continue;
                }
                let mut acc = parent.acc.clone();
                acc.push_edge(specs, &link.metric_values);
                acc.push_node(specs, &graph.node(v)?.metric_values);
                let mut visited = parent.visited.clone();
                visited.insert(ti);
                let mut nodes = parent.nodes.clone();
                nodes.push(v);
                let mut links = parent.links.clone();
                links.push(link.id);
                next.push((
                    Label {
                        node: v,
                        acc,
                        nodes,
                        links,
                        visited,
                        alive: true,
                    },
                    false,
                ));
            }

            for (label, flag) in next {
                if criteria.hopeless(&label.acc) {
                    continue;
                }
                let node = label.node;
                // A label that may still take a summary arc is never worse
                // than one that may not, so it also prunes that bucket.
                if !flag {
                    if let Some(b) = buckets.get_mut(&(node, true)) {
                        for &j in b.iter() {
                            if labels[j].alive && label.dominates(&labels[j], &criteria) {
                                labels[j].alive = false;
                            }
                        }
                    }
                } else if buckets
                    .get(&(node, false))
                    .into_iter()
                    .flatten()
                    .any(|&j| labels[j].alive && labels[j].dominates(&label, &criteria))
                {
                    continue;
                }
                if let Some(j) = insert_label(&mut labels, buckets.entry((node, flag)).or_default(), label, &criteria) {
                    queue.push_back((j, flag));
                }
            }
        }

        let at_target = [false, true]
            .into_iter()
            .flat_map(|f| buckets.get(&(t, f)).into_iter().flatten())
            .map(|&i| &labels[i])
            .filter(|l| l.alive);
        Ok(best_label(at_target, &criteria).map(|l| l.links.clone()))
    }
}

/// Routes through the TAS hierarchy. When source and destination share a
/// TAS this is the constrained route on that TAS alone.
pub fn hierarchical_route(
    hierarchy: &NetworkHierarchy,
    graph: &RoadGraph,
    request: &RouteRequest,
) -> Result<Path, RoutingError> {
    request.check(graph)?;
    let (s, t) = (request.source, request.destination);
    let (ts, tt) = (hierarchy.tas_of(s)?, hierarchy.tas_of(t)?);
    let criteria = Criteria::new(graph.specs(), request);
    criteria.check_objective(graph)?;
    if ts == tt {
        let sub = graph.induced(&hierarchy.areas[&ts].member_nodes);
        let path = constrained_route(&sub, request)?;
        return Path::from_links(graph, s, &path.links);
    }
    let mut top = TopLevel::new(graph, hierarchy, request.objective);
    if let Some(links) = top.search(request)? {
        return Path::from_links(graph, s, &links);
    }
    let relaxed = RouteRequest {
        constraints: Vec::new(),
        ..request.clone()
    };
    match top.search(&relaxed)? {
        Some(_) => Err(RoutingError::Infeasible(s, t)),
        None => Err(RoutingError::NoRoute(s, t)),
    }
}
