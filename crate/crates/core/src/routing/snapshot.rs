use std::collections::{BTreeSet, VecDeque};

use super::RoutingError;
use crate::network::{NetworkError, NodeId, RoadGraph};

/// Subgraph induced by the nodes within `horizon` hops of `center`, hops
/// counted on the undirected closure of the graph.
pub fn build_topology_snapshot(graph: &RoadGraph, center: NodeId, horizon: usize) -> Result<RoadGraph, RoutingError> {
    if !graph.contains_node(center) {
        return Err(NetworkError::UnknownNode(center).into());
    }
    let mut keep = BTreeSet::from([center]);
    let mut frontier = VecDeque::from([(center, 0usize)]);
    while let Some((u, depth)) = frontier.pop_front() {
        if depth == horizon {
            continue;
        }
        let out = graph.out_link_ids(u).iter().map(|l| graph.link(*l).map(|l| l.to));
        let inc = graph.in_link_ids(u).iter().map(|l| graph.link(*l).map(|l| l.from));
        for v in out.chain(inc) {
            let v = v?;
            if keep.insert(v) {
                frontier.push_back((v, depth + 1));
            }
        }
    }
    Ok(graph.induced(&keep))
}
