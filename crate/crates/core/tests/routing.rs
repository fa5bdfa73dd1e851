mod common;

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use proptest::prelude::*;
use rand::Rng;

use common::*;
use tisim_core::network::{partition_into_tas, LinkId, NodeId, TasId, TasKind, Tier};
use tisim_core::routing::{
    best_effort_route, build_topology_snapshot, constrained_route, hierarchical_route, LinkStateNetwork, Objective,
    RouteRequest, RoutingError, TasSummaries,
};

#[test]
fn partition_classifies_every_link_once() {
    let mut r = rng(11);
    for _ in 0..20 {
        let g = random_graph(&mut r, 12, 30);
        let ids: Vec<NodeId> = g.nodes().map(|n| n.id).collect();
        let assignment: BTreeMap<NodeId, TasId> = ids.iter().enumerate().map(|(i, n)| (*n, TasId((i % 3) as u32 + 1))).collect();
        let used: BTreeSet<TasId> = assignment.values().copied().collect();
        let kinds = used.iter().map(|t| (*t, (TasKind::Transit, Tier::Man))).collect();
        let h = partition_into_tas(&g, &assignment, &kinds).unwrap();
        let members: usize = h.areas.values().map(|a| a.member_nodes.len()).sum();
        assert_eq!(members, g.node_count());
        let intra: usize = h.areas.keys().map(|t| h.intra_links(&g, *t).count()).sum();
        assert_eq!(intra + h.external_links.len(), g.link_count());
        for l in g.links() {
            let cross = assignment[&l.from] != assignment[&l.to];
            assert_eq!(cross, h.is_external(l.id));
        }
    }
}

#[test]
fn neighbors_match_link_scan() {
    let mut r = rng(5);
    for _ in 0..30 {
        let g = random_graph(&mut r, 8, 14);
        for n in g.nodes() {
            let got: Vec<LinkId> = g.neighbors(n.id).unwrap().iter().map(|(l, _)| l.id).collect();
            let mut want: Vec<LinkId> = g.links().filter(|l| l.from == n.id).map(|l| l.id).collect();
            want.sort();
            assert_eq!(got, want);
        }
    }
}

#[test]
fn best_effort_matches_enumeration() {
    let mut r = rng(1);
    for _ in 0..50 {
        let g = random_graph(&mut r, 8, 14);
        let (s, t, objective, _) = random_request(&mut r, &g);
        let got = best_effort_route(&g, &RouteRequest::new(s, t, objective));
        match oracle_route(&g, s, t, objective, &[]) {
            OracleVerdict::NoRoute => assert_eq!(got, Err(RoutingError::NoRoute(s, t))),
            OracleVerdict::Infeasible => unreachable!(),
            OracleVerdict::Best { value, nodes, links } => {
                let p = got.unwrap();
                assert_eq!(p.values[objective.metric], value);
                assert_eq!((p.nodes, p.links), (nodes, links));
            }
        }
    }
}

#[test]
fn constrained_matches_enumeration() {
    let mut r = rng(2);
    for _ in 0..50 {
        let g = random_graph(&mut r, 8, 14);
        let (s, t, objective, constraints) = random_request(&mut r, &g);
        let mut req = RouteRequest::new(s, t, objective);
        req.constraints = constraints.clone();
        let got = constrained_route(&g, &req);
        match oracle_route(&g, s, t, objective, &constraints) {
            OracleVerdict::NoRoute => assert_eq!(got, Err(RoutingError::NoRoute(s, t))),
            OracleVerdict::Infeasible => assert_eq!(got, Err(RoutingError::Infeasible(s, t))),
            OracleVerdict::Best { value, nodes, links } => {
                let p = got.unwrap();
                assert_eq!(p.values[objective.metric], value);
                assert_eq!((p.nodes.clone(), p.links.clone()), (nodes, links));
                assert!(p.is_valid(&g, s, t));
            }
        }
    }
}

#[test]
fn optimal_prefixes_are_no_longer_than_the_path() {
    let mut r = rng(3);
    for _ in 0..50 {
        let g = random_graph(&mut r, 8, 14);
        let (s, t, _, _) = random_request(&mut r, &g);
        if let Ok(p) = best_effort_route(&g, &RouteRequest::new(s, t, Objective::minimize(0))) {
            for i in 0..=p.links.len() {
                let prefix = oracle_value(&g, 0, &p.nodes[..=i], &p.links[..i]);
                assert!(prefix <= p.values[0]);
            }
        }
    }
}

#[test]
fn scaling_one_metric_keeps_the_argmin() {
    let mut r = rng(4);
    for _ in 0..40 {
        let g = random_graph(&mut r, 8, 14);
        let (s, t, _, _) = random_request(&mut r, &g);
        let req = RouteRequest::new(s, t, Objective::minimize(1));
        let Ok(before) = constrained_route(&g, &req) else { continue };
        let scale = 4.0;
        let nodes = g
            .nodes()
            .map(|n| {
                let mut n = n.clone();
                n.metric_values[1] *= scale;
                n
            })
            .collect();
        let links = g
            .links()
            .map(|l| {
                let mut l = l.clone();
                l.metric_values[1] *= scale;
                l
            })
            .collect();
        let scaled = tisim_core::network::RoadGraph::new(g.specs().to_vec(), nodes, links).unwrap();
        let after = constrained_route(&scaled, &req).unwrap();
        assert_eq!(before.links, after.links);
    }
}

fn bfs_oracle(g: &tisim_core::network::RoadGraph, center: NodeId, horizon: usize) -> BTreeSet<NodeId> {
    let mut dist: BTreeMap<NodeId, usize> = BTreeMap::from([(center, 0)]);
    let mut q = VecDeque::from([center]);
    while let Some(u) = q.pop_front() {
        for l in g.links() {
            let other = if l.from == u {
                l.to
            } else if l.to == u {
                l.from
            } else {
                continue;
            };
            if !dist.contains_key(&other) {
                dist.insert(other, dist[&u] + 1);
                q.push_back(other);
            }
        }
    }
    dist.into_iter().filter(|(_, d)| *d <= horizon).map(|(n, _)| n).collect()
}

#[test]
fn snapshot_matches_bfs() {
    let mut r = rng(6);
    for _ in 0..40 {
        let g = random_graph(&mut r, 8, 14);
        let center = g.nodes().next().unwrap().id;
        let horizon = r.random_range(0..4);
        let snap = build_topology_snapshot(&g, center, horizon).unwrap();
        assert_eq!(node_set(&snap), bfs_oracle(&g, center, horizon));
        for l in snap.links() {
            assert_eq!(l, g.link(l.id).unwrap());
        }
    }
}

fn chain_fixture() -> (tisim_core::network::RoadGraph, tisim_core::network::NetworkHierarchy) {
    use tisim_core::scenario::Scenario;
    let sc = Scenario::from_toml(tisim_core::fixtures::THREE_TAS).unwrap();
    let h = sc.hierarchy.clone();
    (sc.graph, h)
}

#[test]
fn hierarchical_equals_flat_on_single_border_chain() {
    let (g, h) = chain_fixture();
    let ids: Vec<NodeId> = g.nodes().map(|n| n.id).collect();
    for &s in &ids {
        for &t in &ids {
            let req = RouteRequest::new(s, t, Objective::minimize(0));
            let flat = constrained_route(&g, &req).unwrap();
            let hier = hierarchical_route(&h, &g, &req).unwrap();
            assert_eq!(flat.values, hier.values, "{s} -> {t}");
        }
    }
}

#[test]
fn hierarchical_paths_are_valid_and_never_better_than_flat() {
    let mut r = rng(8);
    let mut gaps = Vec::new();
    for _ in 0..50 {
        let (g, h) = random_three_tas(&mut r);
        let ids: Vec<NodeId> = g.nodes().map(|n| n.id).collect();
        let s = ids[r.random_range(0..ids.len())];
        let t = ids[r.random_range(0..ids.len())];
        let req = RouteRequest::new(s, t, Objective::minimize(0));
        let flat = constrained_route(&g, &req).unwrap();
        let hier = hierarchical_route(&h, &g, &req).unwrap();
        assert!(hier.is_valid(&g, s, t));
        assert!(hier.values[0] >= flat.values[0]);
        let external: BTreeSet<LinkId> = hier.links.iter().copied().filter(|l| h.is_external(*l)).collect();
        let intra: BTreeSet<LinkId> = hier.links.iter().copied().filter(|l| !h.is_external(*l)).collect();
        assert!(external.is_disjoint(&intra));
        assert_eq!(external.len() + intra.len(), hier.links.len());
        gaps.push(hier.values[0] - flat.values[0]);
    }
    assert!(gaps.iter().all(|g| *g >= 0.0));
}

#[test]
fn same_tas_hierarchical_is_local_constrained_route() {
    let mut r = rng(9);
    for _ in 0..20 {
        let (g, h) = random_three_tas(&mut r);
        let area = &h.areas[&TasId(2)];
        let ids: Vec<NodeId> = area.member_nodes.iter().copied().collect();
        let (s, t) = (ids[0], ids[ids.len() - 1]);
        let req = RouteRequest::new(s, t, Objective::minimize(1));
        let local = constrained_route(&g.induced(&area.member_nodes), &req).unwrap();
        assert_eq!(hierarchical_route(&h, &g, &req).unwrap(), local);
    }
}

#[test]
fn link_state_converges_to_global_snapshot() {
    let mut r = rng(10);
    for _ in 0..10 {
        let (mut g, h) = random_three_tas(&mut r);
        let mut net = LinkStateNetwork::bootstrap(&g, &h).unwrap();
        let before = net.clone();
        net.sync(&g, &h, &BTreeSet::new()).unwrap();
        assert_eq!(net, before, "empty sync is a no-op");

        let mut alt = net.clone();
        let ids: Vec<LinkId> = g.links().map(|l| l.id).collect();
        let mut changes = Vec::new();
        for _ in 0..r.random_range(1..6) {
            let id = ids[r.random_range(0..ids.len())];
            let mut values = g.link(id).unwrap().metric_values.clone();
            values[1] = r.random_range(1..40) as f64;
            g = g.with_link_values(id, values).unwrap();
            changes.push(id);
            net.sync(&g, &h, &BTreeSet::from([id])).unwrap();
        }
        // same final graph announced in one batch
        alt.sync(&g, &h, &changes.iter().copied().collect()).unwrap();

        let summaries = TasSummaries::compute(&g, &h);
        for candidate in [&net, &alt] {
            for db in candidate.routers.values() {
                let own: BTreeMap<LinkId, Vec<f64>> = g
                    .links()
                    .filter(|l| h.tas_of(l.from).unwrap() == db.tas)
                    .map(|l| (l.id, l.metric_values.clone()))
                    .collect();
                let held: BTreeMap<LinkId, Vec<f64>> = db.links.iter().map(|(k, v)| (*k, v.values.clone())).collect();
                assert_eq!(held, own);
                let ext: BTreeMap<LinkId, Vec<f64>> = g
                    .links()
                    .filter(|l| h.is_external(l.id))
                    .map(|l| (l.id, l.metric_values.clone()))
                    .collect();
                let held: BTreeMap<LinkId, Vec<f64>> = db.external.iter().map(|(k, v)| (*k, v.values.clone())).collect();
                assert_eq!(held, ext);
                let want: BTreeMap<_, _> = summaries.iter().map(|(k, p)| (*k, p.values.clone())).collect();
                let held: BTreeMap<_, _> = db.summaries.iter().map(|(k, v)| (*k, v.values.clone())).collect();
                assert_eq!(held, want);
            }
        }
    }
}

#[test]
fn link_change_reaches_only_its_own_area_in_detail() {
    let (g, h) = chain_fixture();
    let mut net = LinkStateNetwork::bootstrap(&g, &h).unwrap();
    let tas1 = &h.areas[&TasId(1)];
    let link = h.intra_links(&g, TasId(1)).next().unwrap().id;
    let mut values = g.link(link).unwrap().metric_values.clone();
    values[1] *= 2.0;
    let g2 = g.with_link_values(link, values.clone()).unwrap();
    let summaries_before: BTreeMap<_, _> = net.routers.values().map(|db| (db.node, db.summaries.clone())).collect();
    net.sync(&g2, &h, &BTreeSet::from([link])).unwrap();
    for db in net.routers.values() {
        if tas1.member_nodes.contains(&db.node) {
            assert_eq!(db.links[&link].values, values);
            assert_eq!(db.links[&link].seq, 2);
        } else {
            assert!(!db.links.contains_key(&link));
            // other areas only ever see the summary level
            assert!(db.summaries.len() >= summaries_before[&db.node].len());
        }
    }
}

proptest! {
    #[test]
    fn validating_twice_changes_nothing(seed in any::<u64>()) {
        let mut r = rng(seed);
        let g = random_graph(&mut r, 8, 14);
        let rebuilt = tisim_core::network::RoadGraph::new(
            g.specs().to_vec(), g.nodes().cloned().collect(), g.links().cloned().collect()).unwrap();
        prop_assert!(g.validate().is_ok());
        prop_assert_eq!(rebuilt, g);
    }

    #[test]
    fn stored_values_recompute_bit_exact(seed in any::<u64>()) {
        let mut r = rng(seed);
        let g = random_graph(&mut r, 8, 14);
        let (s, t, objective, constraints) = random_request(&mut r, &g);
        let mut req = RouteRequest::new(s, t, objective);
        req.constraints = constraints;
        if let Ok(p) = constrained_route(&g, &req) {
            let again = p.recompute(&g).unwrap();
            prop_assert!(again.iter().zip(&p.values).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }

    #[test]
    fn addresses_resolve_back_to_their_node(seed in any::<u64>()) {
        let mut r = rng(seed);
        let (g, h) = random_three_tas(&mut r);
        for n in g.nodes() {
            let addr = h.address_of(n.id).unwrap();
            prop_assert_eq!(h.resolve(&g, addr).unwrap(), n.id);
        }
    }
}
