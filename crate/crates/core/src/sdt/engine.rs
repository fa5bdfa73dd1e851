use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Action, FlowTable, RoadRef, SdtError, SignalColor};
use crate::fabric::{match_longest_queue_first, match_max_weight, match_round_robin, ConnectionId, SwitchFabric};
use crate::network::{LinkId, NetworkHierarchy, NodeId, RoadGraph};
use crate::routing::{routing_table, LinkRecord, Objective, RouterDb};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchingPolicy {
    RoundRobin,
    #[default]
    LongestQueueFirst,
    MaxWeight,
}

/// Everything the dispatching engine of one router acts on.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Policies {
    pub table: FlowTable,
    pub matching: MatchingPolicy,
    /// Per-connection weights for max-weight matching. Queue lengths are used
    /// when absent.
    pub weights: Option<BTreeMap<ConnectionId, f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Actuation {
    pub node: NodeId,
    pub phase: u32,
    pub color: SignalColor,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dispatch {
    pub grants: Vec<ConnectionId>,
    pub actuations: Vec<Actuation>,
}

/// Turns this tick's policies into grants. Signalized fabrics follow the
/// signal entry in force (only green admits vehicles); unsignalized fabrics
/// run the configured matching algorithm on their queues.
pub fn dispatching_engine_step(fabric: &SwitchFabric, policies: &Policies, tick: u64) -> Result<Dispatch, SdtError> {
    let t = tick as f64;
    if fabric.signalized {
        let Some(entry) = policies
            .table
            .matching(RoadRef::Intersection(fabric.node), None, t, None)
            .find(|e| matches!(e.action, Action::SetSignal { .. }))
        else {
            return Ok(Dispatch::default());
        };
        let Action::SetSignal {
            phase,
            color,
            connections,
            ..
        } = &entry.action
        else {
            unreachable!()
        };
        if let Some(c) = connections.iter().find(|c| fabric.connection(**c).is_none()) {
            return Err(SdtError::PolicyMismatch(format!("entry {} references unknown connection {c}", entry.id)));
        }
        let grants = if *color == SignalColor::Green {
            let mut g = connections.clone();
            g.sort();
            g.dedup();
            g
        } else {
            Vec::new()
        };
        return Ok(Dispatch {
            grants,
            actuations: vec![Actuation {
                node: fabric.node,
                phase: *phase,
                color: *color,
            }],
        });
    }
    let grants = match policies.matching {
        MatchingPolicy::RoundRobin => match_round_robin(fabric, tick),
        MatchingPolicy::LongestQueueFirst => match_longest_queue_first(fabric),
        MatchingPolicy::MaxWeight => {
            let requested: BTreeMap<ConnectionId, usize> = fabric
                .requests()
                .into_iter()
                .map(|(p, c)| (c, fabric.queue_len(p)))
                .collect();
            let weights: BTreeMap<ConnectionId, f64> = match &policies.weights {
                Some(w) => {
                    if let Some(c) = w.keys().find(|c| fabric.connection(**c).is_none()) {
                        return Err(SdtError::PolicyMismatch(format!("weight for unknown connection {c}")));
                    }
                    w.iter()
                        .filter(|(c, _)| requested.contains_key(c))
                        .map(|(c, v)| (*c, *v))
                        .collect()
                }
                None => requested.iter().map(|(c, n)| (*c, *n as f64)).collect(),
            };
            match_max_weight(fabric, &weights)?
        }
    };
    Ok(Dispatch {
        grants,
        actuations: Vec::new(),
    })
}

/// Next-hop instruction handed from the routing engine to dispatching.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutePolicy {
    pub node: NodeId,
    pub destination: NodeId,
    /// `None` withdraws the route.
    pub next_hop: Option<LinkId>,
    pub values: Vec<f64>,
}

/// Control-plane half of a router: a link-state database and the forwarding
/// table derived from it.
#[derive(Debug, Clone, PartialEq)]
pub struct RoutingEngine {
    pub db: RouterDb,
    pub objective: Objective,
    table: BTreeMap<NodeId, (Option<LinkId>, Vec<f64>)>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EngineOutput {
    pub policies: Vec<RoutePolicy>,
    /// Records this router originated during the step, for its neighbors.
    pub advertise: Vec<LinkRecord>,
}

impl RoutingEngine {
    pub fn new(db: RouterDb, objective: Objective, graph: &RoadGraph, hierarchy: &NetworkHierarchy) -> Result<Self, SdtError> {
        let mut engine = Self {
            db,
            objective,
            table: BTreeMap::new(),
        };
        engine.table = engine.compute(graph, hierarchy)?;
        Ok(engine)
    }

    fn compute(
        &self,
        graph: &RoadGraph,
        hierarchy: &NetworkHierarchy,
    ) -> Result<BTreeMap<NodeId, (Option<LinkId>, Vec<f64>)>, SdtError> {
        let view = self.db.view(graph, hierarchy)?;
        Ok(routing_table(&view, self.db.node, self.objective)?
            .into_iter()
            .map(|r| (r.destination, (r.next_hop, r.values)))
            .collect())
    }

    pub fn next_hop(&self, destination: NodeId) -> Option<LinkId> {
        self.table.get(&destination).and_then(|e| e.0)
    }

    /// Folds in local link measurements and neighbor records, recomputes the
    /// forwarding table and reports the rows that changed.
    pub fn step(
        &mut self,
        graph: &RoadGraph,
        hierarchy: &NetworkHierarchy,
        local_status: &BTreeMap<LinkId, Vec<f64>>,
        neighbor_msgs: &[LinkRecord],
    ) -> Result<EngineOutput, SdtError> {
        let me = self.db.node;
        let mut out = EngineOutput::default();
        for (&link, values) in local_status {
            if graph.link(link).map_err(crate::routing::RoutingError::from)?.from != me {
                continue;
            }
            let current = self.db.links.get(&link);
            if current.map(|r| &r.values) == Some(values) {
                continue;
            }
            let rec = LinkRecord {
                link,
                origin: me,
                seq: current.map_or(0, |r| r.seq) + 1,
                values: values.clone(),
            };
            self.db.accept_link(&rec);
            out.advertise.push(rec);
        }
        let mut touched = !out.advertise.is_empty();
        for rec in neighbor_msgs {
            let Ok(link) = graph.link(rec.link) else { continue };
            if hierarchy.tas_of(link.from).ok() == Some(self.db.tas) {
                touched |= self.db.accept_link(rec);
            } else if hierarchy.is_external(rec.link) {
                touched |= self.db.accept_external(rec);
            }
        }
        if !touched {
            return Ok(out);
        }
        let fresh = self.compute(graph, hierarchy)?;
        for (dest, (hop, values)) in &fresh {
            if self.table.get(dest) != Some(&(*hop, values.clone())) {
                out.policies.push(RoutePolicy {
                    node: me,
                    destination: *dest,
                    next_hop: *hop,
                    values: values.clone(),
                });
            }
        }
        for dest in self.table.keys().filter(|d| !fresh.contains_key(d)) {
            out.policies.push(RoutePolicy {
                node: me,
                destination: *dest,
                next_hop: None,
                values: Vec::new(),
            });
        }
        self.table = fresh;
        Ok(out)
    }
}
