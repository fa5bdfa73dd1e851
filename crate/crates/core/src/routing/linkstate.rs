//! Link-state databases and their synchronization.
//!
//! Every router keeps sequence-numbered records for the links that start in
//! its own TAS, plus network-wide records for external links and TAS
//! summaries. A sync round floods link records inside each TAS, lets one
//! designated border router per TAS (the lowest id) re-originate its TAS
//! summaries, and then floods summaries and external-link records everywhere.
//! A record only replaces another with a strictly higher sequence number.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::hierarchical::TasSummaries;
use super::RoutingError;
use crate::network::{LinkId, NetworkHierarchy, NodeId, RoadGraph, TasId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkRecord {
    pub link: LinkId,
    pub origin: NodeId,
    pub seq: u64,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRecord {
    pub tas: TasId,
    pub entry: NodeId,
    pub exit: NodeId,
    pub metric: usize,
    pub seq: u64,
    pub values: Vec<f64>,
}

pub type SummaryKey = (TasId, NodeId, NodeId, usize);

impl SummaryRecord {
    pub fn key(&self) -> SummaryKey {
        (self.tas, self.entry, self.exit, self.metric)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RouterDb {
    pub node: NodeId,
    pub tas: TasId,
    /// Links starting in this router's TAS.
    pub links: BTreeMap<LinkId, LinkRecord>,
    /// Every external link of the network.
    pub external: BTreeMap<LinkId, LinkRecord>,
    pub summaries: BTreeMap<SummaryKey, SummaryRecord>,
}

fn accept<K: Ord + Copy, R: Clone>(map: &mut BTreeMap<K, R>, key: K, rec: &R, seq: impl Fn(&R) -> u64) -> bool {
    match map.get(&key) {
        Some(cur) if seq(cur) >= seq(rec) => false,
        _ => {
            map.insert(key, rec.clone());
            true
        }
    }
}

impl RouterDb {
    pub fn new(node: NodeId, tas: TasId) -> Self {
        Self {
            node,
            tas,
            links: BTreeMap::new(),
            external: BTreeMap::new(),
            summaries: BTreeMap::new(),
        }
    }

    /// Installs `rec` unless an equal or newer sequence number is held.
    pub fn accept_link(&mut self, rec: &LinkRecord) -> bool {
        accept(&mut self.links, rec.link, rec, |r| r.seq)
    }

    pub fn accept_external(&mut self, rec: &LinkRecord) -> bool {
        accept(&mut self.external, rec.link, rec, |r| r.seq)
    }

    pub fn accept_summary(&mut self, rec: &SummaryRecord) -> bool {
        accept(&mut self.summaries, rec.key(), rec, |r| r.seq)
    }

    /// The router's own TAS topology with the metric values it currently believes.
    pub fn view(&self, graph: &RoadGraph, hierarchy: &NetworkHierarchy) -> Result<RoadGraph, RoutingError> {
        let mut view = graph.induced(&hierarchy.areas[&self.tas].member_nodes);
        for rec in self.links.values() {
            if view.link(rec.link).is_ok() && view.link(rec.link)?.metric_values != rec.values {
                view = view.with_link_values(rec.link, rec.values.clone())?;
            }
        }
        Ok(view)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkStateNetwork {
    pub routers: BTreeMap<NodeId, RouterDb>,
}

impl LinkStateNetwork {
    /// Every router originates its out-links, then one full sync round runs.
    pub fn bootstrap(graph: &RoadGraph, hierarchy: &NetworkHierarchy) -> Result<Self, RoutingError> {
        let mut routers = BTreeMap::new();
        for node in graph.nodes() {
            let mut db = RouterDb::new(node.id, hierarchy.tas_of(node.id)?);
            for &l in graph.out_link_ids(node.id) {
                db.accept_link(&LinkRecord {
                    link: l,
                    origin: node.id,
                    seq: 1,
                    values: graph.link(l)?.metric_values.clone(),
                });
            }
            routers.insert(node.id, db);
        }
        let mut net = Self { routers };
        net.sync(graph, hierarchy, &BTreeSet::new())?;
        Ok(net)
    }

    /// Re-originates `changed` links from `graph` and runs one sync round.
    /// With nothing changed the databases are left as they are.
    pub fn sync(&mut self, graph: &RoadGraph, hierarchy: &NetworkHierarchy, changed: &BTreeSet<LinkId>) -> Result<(), RoutingError> {
        for &id in changed {
            let link = graph.link(id)?;
            let db = self.routers.get_mut(&link.from).expect("router per node");
            let seq = db.links.get(&id).map_or(0, |r| r.seq);
            if db.links.get(&id).map(|r| &r.values) != Some(&link.metric_values) {
                db.accept_link(&LinkRecord {
                    link: id,
                    origin: link.from,
                    seq: seq + 1,
                    values: link.metric_values.clone(),
                });
            }
        }
        self.flood_intra(graph, hierarchy);
        self.originate_summaries(graph, hierarchy)?;
        self.flood_global(graph);
        Ok(())
    }

    fn adjacent_pairs(graph: &RoadGraph) -> Vec<(NodeId, NodeId)> {
        let mut pairs: BTreeSet<(NodeId, NodeId)> = BTreeSet::new();
        for l in graph.links() {
            pairs.insert((l.from, l.to));
            pairs.insert((l.to, l.from));
        }
        pairs.into_iter().collect()
    }

    fn flood_intra(&mut self, graph: &RoadGraph, hierarchy: &NetworkHierarchy) {
        let pairs: Vec<_> = Self::adjacent_pairs(graph)
            .into_iter()
            .filter(|(a, b)| hierarchy.tas_of(*a).ok() == hierarchy.tas_of(*b).ok())
            .collect();
        loop {
            let mut changed = false;
            for &(from, to) in &pairs {
                let records: Vec<LinkRecord> = self.routers[&from].links.values().cloned().collect();
                let dst = self.routers.get_mut(&to).expect("router per node");
                for rec in &records {
                    changed |= dst.accept_link(rec);
                }
            }
            if !changed {
                break;
            }
        }
    }

    fn originate_summaries(&mut self, graph: &RoadGraph, hierarchy: &NetworkHierarchy) -> Result<(), RoutingError> {
        for (tas, area) in &hierarchy.areas {
            for &b in &area.border_nodes {
                let external: Vec<LinkRecord> = self.routers[&b]
                    .links
                    .values()
                    .filter(|r| r.origin == b && hierarchy.is_external(r.link))
                    .cloned()
                    .collect();
                let db = self.routers.get_mut(&b).expect("router per node");
                for rec in &external {
                    db.accept_external(rec);
                }
            }
            let Some(&designated) = area.border_nodes.iter().next() else { continue };
            let view = self.routers[&designated].view(graph, hierarchy)?;
            let fresh = TasSummaries::compute_area(&view, hierarchy, *tas);
            let db = self.routers.get_mut(&designated).expect("router per node");
            for (&key, path) in fresh.iter() {
                let current = db.summaries.get(&key);
                if current.map(|r| &r.values) != Some(&path.values) {
                    let rec = SummaryRecord {
                        tas: key.0,
                        entry: key.1,
                        exit: key.2,
                        metric: key.3,
                        seq: current.map_or(0, |r| r.seq) + 1,
                        values: path.values.clone(),
                    };
                    db.accept_summary(&rec);
                }
            }
        }
        Ok(())
    }

    fn flood_global(&mut self, graph: &RoadGraph) {
        let pairs = Self::adjacent_pairs(graph);
        loop {
            let mut changed = false;
            for &(from, to) in &pairs {
                let src = &self.routers[&from];
                let ext: Vec<LinkRecord> = src.external.values().cloned().collect();
                let sums: Vec<SummaryRecord> = src.summaries.values().cloned().collect();
                let dst = self.routers.get_mut(&to).expect("router per node");
                for rec in &ext {
                    changed |= dst.accept_external(rec);
                }
                for rec in &sums {
                    changed |= dst.accept_summary(rec);
                }
            }
            if !changed {
                break;
            }
        }
    }
}
