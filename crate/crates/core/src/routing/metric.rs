//! Path metric algebra.
//!
//! Every network element (node, link, fabric port, fabric connection) carries
//! one value per declared metric. How those values combine along a path is
//! fixed by the metric's [`MetricKind`]:
//!
//! * additive: sum of node values plus sum of link values,
//! * multiplicative: product of all values,
//! * concave max / min: maximum / minimum over the union of values.
//!
//! Node and link contributions are folded separately, in path order, and only
//! combined at the end. Incremental accumulation in the solvers uses the exact
//! same fold so stored path values are bit-identical to a recomputation.

use serde::{Deserialize, Serialize};

use super::RoutingError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Additive,
    Multiplicative,
    ConcaveMax,
    ConcaveMin,
}

impl MetricKind {
    /// Neutral element of the fold.
    pub fn identity(self) -> f64 {
        match self {
            MetricKind::Additive => 0.0,
            MetricKind::Multiplicative => 1.0,
            MetricKind::ConcaveMax => f64::NEG_INFINITY,
            MetricKind::ConcaveMin => f64::INFINITY,
        }
    }

    pub fn combine(self, acc: f64, value: f64) -> f64 {
        match self {
            MetricKind::Additive => acc + value,
            MetricKind::Multiplicative => acc * value,
            MetricKind::ConcaveMax => acc.max(value),
            MetricKind::ConcaveMin => acc.min(value),
        }
    }

    pub fn is_concave(self) -> bool {
        matches!(self, MetricKind::ConcaveMax | MetricKind::ConcaveMin)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Minimize,
    Maximize,
}

/// Declaration of the k-th metric carried by a network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSpec {
    pub index: usize,
    pub name: String,
    pub kind: MetricKind,
    pub direction: Direction,
}

impl MetricSpec {
    pub fn new(index: usize, name: impl Into<String>, kind: MetricKind, direction: Direction) -> Self {
        Self {
            index,
            name: name.into(),
            kind,
            direction,
        }
    }
}

/// Checks that indices are contiguous from zero and names are unique.
pub fn validate_specs(specs: &[MetricSpec]) -> Result<(), String> {
    for (i, spec) in specs.iter().enumerate() {
        if spec.index != i {
            return Err(format!("metric '{}' has index {} but is declared at position {}", spec.name, spec.index, i));
        }
        if specs[..i].iter().any(|s| s.name == spec.name) {
            return Err(format!("duplicate metric name '{}'", spec.name));
        }
    }
    Ok(())
}

/// Folds node and edge values of one path into the path value `w_k(p)`.
///
/// Additive paths with no elements are 0 and multiplicative ones are 1.
/// Concave kinds have no value on an empty path.
pub fn aggregate_path(kind: MetricKind, node_values: &[f64], edge_values: &[f64]) -> Result<f64, RoutingError> {
    if kind.is_concave() && node_values.is_empty() && edge_values.is_empty() {
        return Err(RoutingError::EmptyPath);
    }
    let nodes = fold(kind, node_values.iter().copied());
    let edges = fold(kind, edge_values.iter().copied());
    Ok(kind.combine(nodes, edges))
}

pub(crate) fn fold(kind: MetricKind, values: impl IntoIterator<Item = f64>) -> f64 {
    values.into_iter().fold(kind.identity(), |acc, v| kind.combine(acc, v))
}

/// Running node/edge accumulators for every metric of a partial path.
///
/// Kept split so that `value(k)` is bit-identical to [`aggregate_path`] over
/// the same elements.
#[derive(Debug, Clone, PartialEq)]
pub struct Accumulator {
    nodes: Vec<f64>,
    edges: Vec<f64>,
}

impl Accumulator {
    pub fn new(specs: &[MetricSpec]) -> Self {
        let init: Vec<f64> = specs.iter().map(|s| s.kind.identity()).collect();
        Self {
            nodes: init.clone(),
            edges: init,
        }
    }

    pub fn push_node(&mut self, specs: &[MetricSpec], values: &[f64]) {
        for (k, spec) in specs.iter().enumerate() {
            self.nodes[k] = spec.kind.combine(self.nodes[k], values[k]);
        }
    }

    pub fn push_edge(&mut self, specs: &[MetricSpec], values: &[f64]) {
        for (k, spec) in specs.iter().enumerate() {
            self.edges[k] = spec.kind.combine(self.edges[k], values[k]);
        }
    }

    /// Appends an already folded segment (node part, edge part).
    pub fn push_segment(&mut self, specs: &[MetricSpec], node_part: &[f64], edge_part: &[f64]) {
        self.push_node(specs, node_part);
        self.push_edge(specs, edge_part);
    }

    pub fn value(&self, specs: &[MetricSpec], k: usize) -> f64 {
        specs[k].kind.combine(self.nodes[k], self.edges[k])
    }

    pub fn values(&self, specs: &[MetricSpec]) -> Vec<f64> {
        (0..specs.len()).map(|k| self.value(specs, k)).collect()
    }

    pub fn node_part(&self) -> &[f64] {
        &self.nodes
    }

    pub fn edge_part(&self) -> &[f64] {
        &self.edges
    }
}
