//! Route selection over a [`RoadGraph`]: metric algebra, best-effort and
//! constrained solvers, topology snapshots, link-state flooding and
//! hierarchical (TAS-level) composition.

use std::cmp::Ordering;
use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::{LinkId, NetworkError, NetworkHierarchy, NodeId, RoadGraph, TransportAddress};

pub mod csp;
pub mod dijkstra;
pub mod hierarchical;
pub mod linkstate;
pub mod metric;
pub mod snapshot;

pub use csp::constrained_route;
pub use dijkstra::{best_effort_route, routing_table, RouteRecord};
pub use hierarchical::{hierarchical_route, TasSummaries};
pub use linkstate::{LinkRecord, LinkStateNetwork, RouterDb, SummaryRecord};
pub use metric::{aggregate_path, Direction, MetricKind, MetricSpec};
pub use snapshot::build_topology_snapshot;

use metric::Accumulator;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RoutingError {
    #[error("concave metric of an empty path is undefined")]
    EmptyPath,
    #[error("no route from {0} to {1}")]
    NoRoute(NodeId, NodeId),
    #[error("no route from {0} to {1} satisfies the constraints")]
    Infeasible(NodeId, NodeId),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error(transparent)]
    Network(#[from] NetworkError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sense {
    AtMost,
    AtLeast,
}

/// Bound `δ_k` on the path value of metric `metric`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub metric: usize,
    pub bound: f64,
    pub sense: Sense,
}

impl Constraint {
    pub fn at_most(metric: usize, bound: f64) -> Self {
        Self {
            metric,
            bound,
            sense: Sense::AtMost,
        }
    }

    pub fn at_least(metric: usize, bound: f64) -> Self {
        Self {
            metric,
            bound,
            sense: Sense::AtLeast,
        }
    }

    pub fn satisfied_by(&self, value: f64) -> bool {
        match self.sense {
            Sense::AtMost => value <= self.bound,
            Sense::AtLeast => value >= self.bound,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Objective {
    pub metric: usize,
    pub direction: Direction,
}

impl Objective {
    pub fn minimize(metric: usize) -> Self {
        Self {
            metric,
            direction: Direction::Minimize,
        }
    }

    pub fn maximize(metric: usize) -> Self {
        Self {
            metric,
            direction: Direction::Maximize,
        }
    }

    /// `Less` means `a` is the better value.
    pub fn compare(&self, a: f64, b: f64) -> Ordering {
        let ord = a.partial_cmp(&b).unwrap_or(Ordering::Equal);
        match self.direction {
            Direction::Minimize => ord,
            Direction::Maximize => ord.reverse(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteRequest {
    pub source: NodeId,
    pub destination: NodeId,
    pub objective: Objective,
    pub constraints: Vec<Constraint>,
    /// Hop bound on the topology considered around the source.
    pub horizon: Option<usize>,
}

impl RouteRequest {
    pub fn new(source: NodeId, destination: NodeId, objective: Objective) -> Self {
        Self {
            source,
            destination,
            objective,
            constraints: Vec::new(),
            horizon: None,
        }
    }

    pub fn from_addresses(
        hierarchy: &NetworkHierarchy,
        graph: &RoadGraph,
        source: TransportAddress,
        destination: TransportAddress,
        objective: Objective,
    ) -> Result<Self, RoutingError> {
        Ok(Self::new(
            hierarchy.resolve(graph, source)?,
            hierarchy.resolve(graph, destination)?,
            objective,
        ))
    }

    pub fn with_constraint(mut self, c: Constraint) -> Self {
        self.constraints.push(c);
        self
    }

    pub fn with_horizon(mut self, hops: usize) -> Self {
        self.horizon = Some(hops);
        self
    }

    pub(crate) fn check(&self, graph: &RoadGraph) -> Result<(), RoutingError> {
        let n = graph.specs().len();
        graph.node(self.source)?;
        graph.node(self.destination)?;
        if self.objective.metric >= n {
            return Err(RoutingError::Precondition(format!("objective metric {} out of range", self.objective.metric)));
        }
        if let Some(c) = self.constraints.iter().find(|c| c.metric >= n) {
            return Err(RoutingError::Precondition(format!("constraint metric {} out of range", c.metric)));
        }
        if self.horizon == Some(0) {
            return Err(RoutingError::Precondition("horizon must be at least 1".into()));
        }
        Ok(())
    }
}

/// A simple path `v_s … v_t` with its aggregated metric values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Path {
    pub nodes: Vec<NodeId>,
    pub links: Vec<LinkId>,
    pub values: Vec<f64>,
}

impl Path {
    /// Builds the path that starts at `source` and follows `links`,
    /// aggregating values from the graph's element values.
    pub fn from_links(graph: &RoadGraph, source: NodeId, links: &[LinkId]) -> Result<Self, RoutingError> {
        let mut nodes = vec![source];
        for &id in links {
            let link = graph.link(id)?;
            if link.from != *nodes.last().expect("nonempty") {
                return Err(RoutingError::Precondition(format!("link {id} does not continue the path")));
            }
            nodes.push(link.to);
        }
        let mut path = Self {
            nodes,
            links: links.to_vec(),
            values: Vec::new(),
        };
        path.values = path.recompute(graph)?;
        Ok(path)
    }

    pub fn source(&self) -> NodeId {
        self.nodes[0]
    }

    pub fn destination(&self) -> NodeId {
        *self.nodes.last().expect("paths hold at least one node")
    }

    /// Path values recomputed from element values.
    pub fn recompute(&self, graph: &RoadGraph) -> Result<Vec<f64>, RoutingError> {
        let specs = graph.specs();
        let mut acc = Accumulator::new(specs);
        for n in &self.nodes {
            acc.push_node(specs, &graph.node(*n)?.metric_values);
        }
        for l in &self.links {
            acc.push_edge(specs, &graph.link(*l)?.metric_values);
        }
        Ok(acc.values(specs))
    }

    /// Connected, simple, from `s` to `t`, with consistent stored values.
    pub fn is_valid(&self, graph: &RoadGraph, s: NodeId, t: NodeId) -> bool {
        if self.nodes.first() != Some(&s) || self.nodes.last() != Some(&t) || self.nodes.len() != self.links.len() + 1 {
            return false;
        }
        let distinct: BTreeSet<_> = self.nodes.iter().collect();
        if distinct.len() != self.nodes.len() {
            return false;
        }
        let joined = self.links.iter().enumerate().all(|(i, l)| {
            graph
                .link(*l)
                .map(|l| l.from == self.nodes[i] && l.to == self.nodes[i + 1])
                .unwrap_or(false)
        });
        joined
            && self
                .recompute(graph)
                .map(|v| v.iter().zip(&self.values).all(|(a, b)| a.to_bits() == b.to_bits()))
                .unwrap_or(false)
    }

    /// Lexicographic order on (node sequence, link sequence).
    pub(crate) fn seq_cmp(an: &[NodeId], al: &[LinkId], bn: &[NodeId], bl: &[LinkId]) -> Ordering {
        an.cmp(bn).then_with(|| al.cmp(bl))
    }
}

/// Directed reachability, used to tell `NoRoute` from `Infeasible`.
pub(crate) fn reachable(graph: &RoadGraph, s: NodeId, t: NodeId) -> bool {
    let mut seen = BTreeSet::from([s]);
    let mut queue = VecDeque::from([s]);
    while let Some(u) = queue.pop_front() {
        if u == t {
            return true;
        }
        for &l in graph.out_link_ids(u) {
            let v = graph.link(l).expect("indexed").to;
            if seen.insert(v) {
                queue.push_back(v);
            }
        }
    }
    false
}

/// Per-criterion ordering used for label dominance.
///
/// Every extension (`+c`, `*c` with `c ≥ 0`, `max`, `min`) is monotone
/// nondecreasing in the accumulated value, so comparing accumulated values
/// in each criterion's preferred direction is sound.
#[derive(Debug, Clone)]
pub(crate) struct Criteria<'a> {
    pub specs: &'a [MetricSpec],
    pub objective: Objective,
    pub constraints: &'a [Constraint],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Dominance {
    Better,
    Equal,
    Worse,
    Incomparable,
}

impl<'a> Criteria<'a> {
    pub fn new(specs: &'a [MetricSpec], request: &'a RouteRequest) -> Self {
        Self {
            specs,
            objective: request.objective,
            constraints: &request.constraints,
        }
    }

    fn directions(&self) -> impl Iterator<Item = (usize, bool)> + '_ {
        // (metric, larger_is_better)
        std::iter::once((self.objective.metric, self.objective.direction == Direction::Maximize)).chain(
            self.constraints
                .iter()
                .map(|c| (c.metric, c.sense == Sense::AtLeast)),
        )
    }

    pub fn compare(&self, a: &Accumulator, b: &Accumulator) -> Dominance {
        let (mut better, mut worse) = (false, false);
        for (k, larger) in self.directions() {
            let (x, y) = (a.value(self.specs, k), b.value(self.specs, k));
            match x.partial_cmp(&y).unwrap_or(Ordering::Equal) {
                Ordering::Equal => {}
                Ordering::Less => {
                    if larger {
                        worse = true
                    } else {
                        better = true
                    }
                }
                Ordering::Greater => {
                    if larger {
                        better = true
                    } else {
                        worse = true
                    }
                }
            }
        }
        match (better, worse) {
            (false, false) => Dominance::Equal,
            (true, false) => Dominance::Better,
            (false, true) => Dominance::Worse,
            (true, true) => Dominance::Incomparable,
        }
    }

    pub fn feasible(&self, acc: &Accumulator) -> bool {
        self.constraints
            .iter()
            .all(|c| c.satisfied_by(acc.value(self.specs, c.metric)))
    }

    /// A partial path that already violates a constraint no extension can repair.
    pub fn hopeless(&self, acc: &Accumulator) -> bool {
        self.constraints.iter().any(|c| {
            let v = acc.value(self.specs, c.metric);
            match (c.sense, self.specs[c.metric].kind) {
                (Sense::AtMost, MetricKind::Additive | MetricKind::ConcaveMax) => v > c.bound,
                (Sense::AtLeast, MetricKind::ConcaveMin) => v < c.bound,
                _ => false,
            }
        })
    }

    pub fn check_objective(&self, graph: &RoadGraph) -> Result<(), RoutingError> {
        let spec = &self.specs[self.objective.metric];
        if spec.kind == MetricKind::Multiplicative {
            let over = graph
                .nodes()
                .map(|n| n.metric_values[spec.index])
                .chain(graph.links().map(|l| l.metric_values[spec.index]))
                .any(|v| v > 1.0 || v <= 0.0);
            if over {
                return Err(RoutingError::Precondition(format!(
                    "multiplicative objective '{}' requires values in (0, 1]",
                    spec.name
                )));
            }
        }
        Ok(())
    }
}
