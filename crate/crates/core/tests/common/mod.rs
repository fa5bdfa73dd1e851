//! Random instance generators and brute-force oracles shared by the
//! integration and acceptance tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tisim_core::network::{
    partition_into_tas, LinkId, NetworkHierarchy, NodeId, NodeKind, RoadGraph, RoadLink, RoadNode, TasId, TasKind,
    Tier, DISTANCE, TIME,
};
use tisim_core::routing::{Constraint, Direction, MetricKind, MetricSpec, Objective, Sense};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// distance, time (additive) and a concave-min speed limit.
pub fn three_metrics() -> Vec<MetricSpec> {
    vec![
        MetricSpec::new(0, DISTANCE, MetricKind::Additive, Direction::Minimize),
        MetricSpec::new(1, TIME, MetricKind::Additive, Direction::Minimize),
        MetricSpec::new(2, "limit", MetricKind::ConcaveMin, Direction::Maximize),
    ]
}

fn random_node(r: &mut ChaCha8Rng, id: u32, kind: NodeKind) -> RoadNode {
    RoadNode {
        id: NodeId(id),
        kind,
        position: (0.0, 0.0),
        metric_values: vec![r.random_range(0..3) as f64, r.random_range(0..3) as f64, (r.random_range(3..9) * 10) as f64],
        terminals: 0,
    }
}

fn random_link(r: &mut ChaCha8Rng, id: u32, from: u32, to: u32) -> RoadLink {
    let dist = r.random_range(1..20) as f64;
    RoadLink {
        id: LinkId(id),
        from: NodeId(from),
        to: NodeId(to),
        length: dist,
        lane_count: 1,
        speed_limit: 50.0,
        metric_values: vec![dist, r.random_range(1..20) as f64, (r.random_range(2..9) * 10) as f64],
    }
}

/// Up to `max_nodes` nodes and `max_links` links, at most two parallel
/// links per ordered pair, integer-valued metrics so sums are exact.
pub fn random_graph(r: &mut ChaCha8Rng, max_nodes: u32, max_links: usize) -> RoadGraph {
    let n = r.random_range(2..=max_nodes);
    let nodes: Vec<RoadNode> = (0..n).map(|i| random_node(r, i, NodeKind::Intersection)).collect();
    let target = r.random_range(1..=max_links);
    let mut per_pair: BTreeMap<(u32, u32), usize> = BTreeMap::new();
    let mut links = Vec::new();
    let mut attempts = 0;
    while links.len() < target && attempts < 200 {
        attempts += 1;
        let (a, b) = (r.random_range(0..n), r.random_range(0..n));
        if a == b {
            continue;
        }
        let c = per_pair.entry((a, b)).or_default();
        if *c >= 2 {
            continue;
        }
        *c += 1;
        // ids drawn out of order so id-ordering is actually exercised
        let id = (links.len() as u32 * 7 + 3) % 97;
        links.push(random_link(r, id, a, b));
    }
    RoadGraph::new(three_metrics(), nodes, links).expect("generator builds valid graphs")
}

pub fn random_request(r: &mut ChaCha8Rng, g: &RoadGraph) -> (NodeId, NodeId, Objective, Vec<Constraint>) {
    let ids: Vec<NodeId> = g.nodes().map(|n| n.id).collect();
    let s = ids[r.random_range(0..ids.len())];
    let t = ids[r.random_range(0..ids.len())];
    let objective = if r.random_bool(0.5) {
        Objective::minimize(0)
    } else {
        Objective::minimize(1)
    };
    let mut constraints = Vec::new();
    if r.random_bool(0.8) {
        constraints.push(Constraint::at_most(1 - objective.metric, r.random_range(5..45) as f64));
    }
    if r.random_bool(0.7) {
        constraints.push(Constraint::at_least(2, (r.random_range(2..8) * 10) as f64));
    }
    (s, t, objective, constraints)
}

/// Every simple path from `s` to `t` as (nodes, links), parallel links included.
pub fn all_simple_paths(g: &RoadGraph, s: NodeId, t: NodeId) -> Vec<(Vec<NodeId>, Vec<LinkId>)> {
    fn dfs(
        g: &RoadGraph,
        t: NodeId,
        nodes: &mut Vec<NodeId>,
        links: &mut Vec<LinkId>,
        out: &mut Vec<(Vec<NodeId>, Vec<LinkId>)>,
    ) {
        let u = *nodes.last().unwrap();
        if u == t {
            out.push((nodes.clone(), links.clone()));
            return;
        }
        for l in g.links().filter(|l| l.from == u) {
            if nodes.contains(&l.to) {
                continue;
            }
            nodes.push(l.to);
            links.push(l.id);
            dfs(g, t, nodes, links, out);
            nodes.pop();
            links.pop();
        }
    }
    let mut out = Vec::new();
    dfs(g, t, &mut vec![s], &mut Vec::new(), &mut out);
    out
}

/// Path value computed directly from the definition of each metric kind.
pub fn oracle_value(g: &RoadGraph, k: usize, nodes: &[NodeId], links: &[LinkId]) -> f64 {
    let kind = g.specs()[k].kind;
    let nv: Vec<f64> = nodes.iter().map(|n| g.node(*n).unwrap().metric_values[k]).collect();
    let ev: Vec<f64> = links.iter().map(|l| g.link(*l).unwrap().metric_values[k]).collect();
    match kind {
        MetricKind::Additive => {
            let mut a = 0.0;
            for v in &nv {
                a += v;
            }
            let mut b = 0.0;
            for v in &ev {
                b += v;
            }
            a + b
        }
        MetricKind::Multiplicative => nv.iter().product::<f64>() * ev.iter().product::<f64>(),
        MetricKind::ConcaveMax => nv.iter().chain(&ev).fold(f64::NEG_INFINITY, |a, b| a.max(*b)),
        MetricKind::ConcaveMin => nv.iter().chain(&ev).fold(f64::INFINITY, |a, b| a.min(*b)),
    }
}

pub enum OracleVerdict {
    NoRoute,
    Infeasible,
    Best { value: f64, nodes: Vec<NodeId>, links: Vec<LinkId> },
}

pub fn oracle_route(
    g: &RoadGraph,
    s: NodeId,
    t: NodeId,
    objective: Objective,
    constraints: &[Constraint],
) -> OracleVerdict {
    let paths = all_simple_paths(g, s, t);
    if paths.is_empty() {
        return OracleVerdict::NoRoute;
    }
    let mut best: Option<(f64, Vec<NodeId>, Vec<LinkId>)> = None;
    for (nodes, links) in paths {
        let ok = constraints.iter().all(|c| {
            let v = oracle_value(g, c.metric, &nodes, &links);
            match c.sense {
                Sense::AtMost => v <= c.bound,
                Sense::AtLeast => v >= c.bound,
            }
        });
        if !ok {
            continue;
        }
        let v = oracle_value(g, objective.metric, &nodes, &links);
        let better = match &best {
            None => true,
            Some((bv, bn, bl)) => {
                let strictly = match objective.direction {
                    Direction::Minimize => v < *bv,
                    Direction::Maximize => v > *bv,
                };
                strictly || (v == *bv && (nodes.clone(), links.clone()) < (bn.clone(), bl.clone()))
            }
        };
        if better {
            best = Some((v, nodes, links));
        }
    }
    match best {
        None => OracleVerdict::Infeasible,
        Some((value, nodes, links)) => OracleVerdict::Best { value, nodes, links },
    }
}

/// Three areas of 3–4 nodes, each internally strongly connected, joined by
/// two-way external links so the quotient graph is connected.
pub fn random_three_tas(r: &mut ChaCha8Rng) -> (RoadGraph, NetworkHierarchy) {
    let mut nodes = Vec::new();
    let mut links = Vec::new();
    let mut assignment = BTreeMap::new();
    let mut members: Vec<Vec<u32>> = Vec::new();
    let mut next_node = 0u32;
    let mut next_link = 0u32;
    for tas in 0..3u32 {
        let size = r.random_range(3..=4);
        let ids: Vec<u32> = (next_node..next_node + size).collect();
        next_node += size;
        for &id in &ids {
            let kind = if id == ids[0] { NodeKind::Terminal } else { NodeKind::Intersection };
            nodes.push(random_node(r, id, kind));
            assignment.insert(NodeId(id), TasId(tas + 1));
        }
        for i in 0..ids.len() {
            let (a, b) = (ids[i], ids[(i + 1) % ids.len()]);
            links.push(random_link(r, next_link, a, b));
            links.push(random_link(r, next_link + 1, b, a));
            next_link += 2;
        }
        for _ in 0..r.random_range(0..3) {
            let (a, b) = (ids[r.random_range(0..ids.len())], ids[r.random_range(0..ids.len())]);
            if a != b {
                links.push(random_link(r, next_link, a, b));
                next_link += 1;
            }
        }
        members.push(ids);
    }
    let mut pairs = vec![(0usize, 1usize), (1, 2)];
    if r.random_bool(0.5) {
        pairs.push((0, 2));
    }
    for (x, y) in pairs {
        for _ in 0..r.random_range(1..=2) {
            let a = members[x][r.random_range(0..members[x].len())];
            let b = members[y][r.random_range(0..members[y].len())];
            links.push(random_link(r, next_link, a, b));
            links.push(random_link(r, next_link + 1, b, a));
            next_link += 2;
        }
    }
    let g = RoadGraph::new(three_metrics(), nodes, links).unwrap();
    let kinds = BTreeMap::from([
        (TasId(1), (TasKind::Stub, Tier::Lan)),
        (TasId(2), (TasKind::Transit, Tier::Man)),
        (TasId(3), (TasKind::Stub, Tier::Lan)),
    ]);
    let h = partition_into_tas(&g, &assignment, &kinds).unwrap();
    (g, h)
}

pub fn node_set(g: &RoadGraph) -> BTreeSet<NodeId> {
    g.nodes().map(|n| n.id).collect()
}

// ---- fabrics ----

use tisim_core::fabric::{
    ConflictKind, ConflictMatrix, Connection, ConnectionId, LaneBinding, Movement, Port, PortDirection, PortId,
    SwitchFabric,
};

/// Abstract crossbar: random input/output ports, up to `max_conn`
/// connections, port-sharing kinds forced, cross conflicts drawn at random.
pub fn random_fabric(r: &mut ChaCha8Rng, max_conn: usize) -> SwitchFabric {
    let n_in = r.random_range(1..=5u32);
    let n_out = r.random_range(1..=5u32);
    let mut ports = Vec::new();
    for i in 0..n_in + n_out {
        ports.push(Port {
            id: PortId(i),
            direction: if i < n_in { PortDirection::Input } else { PortDirection::Output },
            lane: LaneBinding { link: LinkId(i), lane: 0 },
            arm: i as usize,
            angle: 0.0,
            metric_values: Vec::new(),
        });
    }
    let mut pairs: Vec<(u32, u32)> = (0..n_in).flat_map(|a| (n_in..n_in + n_out).map(move |b| (a, b))).collect();
    for i in (1..pairs.len()).rev() {
        pairs.swap(i, r.random_range(0..=i));
    }
    pairs.truncate(r.random_range(1..=max_conn.min(pairs.len())));
    pairs.sort();
    let connections: Vec<Connection> = pairs
        .iter()
        .enumerate()
        .map(|(i, (a, b))| Connection {
            id: ConnectionId(i as u32),
            in_port: PortId(*a),
            out_port: PortId(*b),
            movement: Movement::Through,
            metric_values: Vec::new(),
        })
        .collect();
    let p_cross = r.random_range(0.0..0.6);
    let mut m = ConflictMatrix::new(connections.len());
    for i in 0..connections.len() {
        for j in i + 1..connections.len() {
            let (a, b) = (&connections[i], &connections[j]);
            let kind = if a.in_port == b.in_port {
                ConflictKind::Diverge
            } else if a.out_port == b.out_port {
                ConflictKind::Merge
            } else if r.random_bool(p_cross) {
                ConflictKind::Cross
            } else {
                ConflictKind::None
            };
            m.set(i, j, kind);
        }
    }
    SwitchFabric::from_parts(NodeId(0), ports, connections, m).expect("consistent by construction")
}

/// Random head-of-line state: each input queue gets 0..4 vehicles on
/// random connections of that port.
pub fn fill_queues(r: &mut ChaCha8Rng, f: &mut SwitchFabric, next_vehicle: &mut u32) {
    let inputs: Vec<PortId> = f.input_ports().map(|p| p.id).collect();
    for p in inputs {
        let options: Vec<ConnectionId> = f.connections.iter().filter(|c| c.in_port == p).map(|c| c.id).collect();
        if options.is_empty() {
            continue;
        }
        for _ in 0..r.random_range(0..4) {
            let c = options[r.random_range(0..options.len())];
            f.enqueue(p, tisim_core::network::VehicleId(*next_vehicle), c).unwrap();
            *next_vehicle += 1;
        }
    }
}

/// Raw matrix check, independent of the fabric's helper methods.
pub fn oracle_conflict_free(f: &SwitchFabric, set: &[ConnectionId]) -> bool {
    set.iter().all(|a| {
        set.iter()
            .all(|b| a == b || f.conflicts.get(a.0 as usize, b.0 as usize) == ConflictKind::None)
    })
}

/// Exhaustive optimum over all 2^|C| subsets.
pub fn brute_force_max_weight(f: &SwitchFabric, w: &BTreeMap<ConnectionId, f64>) -> f64 {
    let n = f.connections.len();
    let mut best = 0.0f64;
    for mask in 0u32..(1 << n) {
        let set: Vec<ConnectionId> = (0..n).filter(|i| mask & (1 << i) != 0).map(|i| ConnectionId(i as u32)).collect();
        if oracle_conflict_free(f, &set) {
            let total: f64 = set.iter().map(|c| w.get(c).copied().unwrap_or(0.0)).sum();
            best = best.max(total);
        }
    }
    best
}

/// Do chords p1–p2 and q1–q2 of the unit circle properly intersect?
/// Plain Cartesian orientation test.
pub fn segments_cross(p1: f64, p2: f64, q1: f64, q2: f64) -> bool {
    let pt = |a: f64| (a.cos(), a.sin());
    let orient = |a: (f64, f64), b: (f64, f64), c: (f64, f64)| (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0);
    let (a, b, c, d) = (pt(p1), pt(p2), pt(q1), pt(q2));
    let (d1, d2) = (orient(a, b, c), orient(a, b, d));
    let (d3, d4) = (orient(c, d, a), orient(c, d, b));
    d1 * d2 < 0.0 && d3 * d4 < 0.0
}

/// Expected conflict kind of two connections from port geometry alone.
pub fn geometric_conflict(f: &SwitchFabric, a: ConnectionId, b: ConnectionId) -> ConflictKind {
    let (ca, cb) = (f.connection(a).unwrap(), f.connection(b).unwrap());
    if ca.in_port == cb.in_port {
        return ConflictKind::Diverge;
    }
    if ca.out_port == cb.out_port {
        return ConflictKind::Merge;
    }
    let ang = |p: PortId| f.port(p).unwrap().angle;
    if segments_cross(ang(ca.in_port), ang(ca.out_port), ang(cb.in_port), ang(cb.out_port)) {
        ConflictKind::Cross
    } else {
        ConflictKind::None
    }
}

// ---- queues ----

/// Lindley recursion W_{n+1} = max(0, W_n + S_n − A_{n+1}), sharing no
/// code with the library's event-driven simulator.
pub fn lindley_mean_wait(r: &mut ChaCha8Rng, lambda: f64, mu: f64, deterministic: bool, n: usize) -> f64 {
    let exp = |r: &mut ChaCha8Rng, rate: f64| -(1.0 - r.random::<f64>()).ln() / rate;
    let mut w = 0.0;
    let mut total = 0.0;
    for _ in 0..n {
        total += w;
        let s = if deterministic { 1.0 / mu } else { exp(r, mu) };
        let a = exp(r, lambda);
        w = (w + s - a).max(0.0);
    }
    total / n as f64
}
