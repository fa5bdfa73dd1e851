use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::state::LinkLattice;
use super::{init_scenario, onward_route, ControlConfig, Measurement, SimConfig, SimError, SimState};
use crate::fabric::{ConnectionId, QueuedVehicle};
use crate::network::{LinkId, NodeId, RoadGraph, VehicleId, TIME};
use crate::scenario::Scenario;
use crate::sdt::{
    compile_signal_plan, cooperative_signal_control, SdtError, dispatching_engine_step, green_wave_advisory, vehicle_controller_step, Action,
    Actuation, ApproachingPlatoon, ControllerRole, FlowTable, Policies, RoadRef, SignalAhead, SignalColor,
    SignalPlan, Tos, VehicleContext, VehicleReport,
};

/// Version of the fixed plans installed at start-up.
const BASE_VERSION: u64 = 1;

/// Extra travel time per unit of density when the central controller
/// reroutes, relative to free flow.
const CONGESTION_WEIGHT: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Fixed-time plans and static routes.
    Baseline,
    /// Controllers issue signal extensions, advisories and routes.
    Controlled,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Baseline => "baseline",
            Mode::Controlled => "controlled",
        })
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "baseline" => Ok(Mode::Baseline),
            "controlled" => Ok(Mode::Controlled),
            other => Err(format!("unknown mode '{other}'")),
        }
    }
}

/// Invariant violations counted over a run. All zero in a correct run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Audit {
    pub ticks: u64,
    pub conservation_violations: u64,
    pub double_occupancy: u64,
    pub red_crossings: u64,
    pub speed_violations: u64,
}

impl Audit {
    pub fn is_clean(&self) -> bool {
        self.conservation_violations == 0
            && self.double_occupancy == 0
            && self.red_crossings == 0
            && self.speed_violations == 0
    }
}

/// Extended plan in force at one node until its cycle ends.
#[derive(Debug, Clone)]
struct ActivePlan {
    plan: SignalPlan,
    cycle: i64,
}

#[derive(Debug, Clone, Copy)]
struct Move {
    slot: usize,
    speed: u8,
    link: LinkId,
    lane: u8,
    cell: usize,
    crossed: Option<(NodeId, Option<ConnectionId>)>,
    arrived: bool,
}

/// One seeded run over a scenario.
#[derive(Debug, Clone)]
pub struct Simulation {
    scenario: Scenario,
    config: SimConfig,
    control: ControlConfig,
    mode: Mode,
    state: SimState,
    tos: Tos,
    policies: BTreeMap<NodeId, Policies>,
    vehicle_table: FlowTable,
    active: BTreeMap<NodeId, ActivePlan>,
    grants: BTreeMap<NodeId, BTreeSet<ConnectionId>>,
    audit: Audit,
    /// Update order of the lattice, downstream links first.
    order: Vec<LinkId>,
}

/// Post-order of a depth-first walk over successor links, so a link comes
/// after the links it feeds wherever the network is acyclic.
fn downstream_first(graph: &RoadGraph) -> Vec<LinkId> {
    let mut seen = BTreeSet::new();
    let mut order = Vec::with_capacity(graph.link_count());
    for root in graph.links().map(|l| l.id) {
        if !seen.insert(root) {
            continue;
        }
        let mut stack = vec![(root, 0usize)];
        while let Some((l, i)) = stack.pop() {
            let to = graph.link(l).expect("listed").to;
            let next = graph.out_link_ids(to).get(i).copied();
            match next {
                Some(n) => {
                    stack.push((l, i + 1));
                    if seen.insert(n) {
                        stack.push((n, 0));
                    }
                }
                None => order.push(l),
            }
        }
    }
    order
}

fn cycle_index(plan: &SignalPlan, t: f64) -> i64 {
    ((t - plan.offset) / plan.cycle_length).floor() as i64
}

fn phase_of(plan: &SignalPlan, conn: ConnectionId) -> Option<usize> {
    plan.phases.iter().position(|p| p.connections.contains(&conn))
}

impl Simulation {
    pub fn new(scenario: &Scenario, mode: Mode, av_fraction: f64) -> Result<Self, SimError> {
        Self::with_config(scenario, scenario.sim.clone(), mode, av_fraction)
    }

    pub fn with_config(scenario: &Scenario, config: SimConfig, mode: Mode, av_fraction: f64) -> Result<Self, SimError> {
        let state = init_scenario(scenario, &config, av_fraction)?;
        let signalized: BTreeSet<NodeId> = scenario.signals.keys().copied().collect();
        let mut policies = BTreeMap::new();
        for (node, fabric) in &scenario.fabrics {
            let mut p = Policies {
                matching: scenario.control.matching,
                ..Policies::default()
            };
            if fabric.signalized {
                let plan = scenario.signals.get(node).ok_or(SimError::UnknownSignal(*node))?;
                p.table.install_all(compile_signal_plan(plan, BASE_VERSION)?)?;
            }
            policies.insert(*node, p);
        }
        Ok(Self {
            scenario: scenario.clone(),
            config,
            control: scenario.control.clone(),
            mode,
            state,
            tos: Tos::per_intersection(&signalized),
            policies,
            vehicle_table: FlowTable::new(),
            active: BTreeMap::new(),
            grants: BTreeMap::new(),
            audit: Audit::default(),
            order: downstream_first(&scenario.graph),
        })
    }

    pub fn with_control(mut self, control: ControlConfig) -> Self {
        for p in self.policies.values_mut() {
            p.matching = control.matching;
        }
        self.control = control;
        self
    }

    pub fn state(&self) -> &SimState {
        &self.state
    }

    pub fn audit(&self) -> Audit {
        self.audit
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    /// Plan currently in force at `node`, extensions included.
    pub fn signal_plan(&self, node: NodeId) -> Option<&SignalPlan> {
        self.active
            .get(&node)
            .map(|a| &a.plan)
            .or_else(|| self.scenario.signals.get(&node))
    }

    /// Runs warm-up plus the measured duration and returns the measurements.
    pub fn run(&mut self) -> Result<&[Measurement], SimError> {
        let total = self.config.warmup + self.config.duration;
        while self.state.clock < total {
            self.step()?;
        }
        Ok(&self.state.measurements)
    }

    pub fn step(&mut self) -> Result<(), SimError> {
        let t = self.state.clock;
        if self.mode == Mode::Controlled {
            self.controllers(t)?;
        }
        self.route_follow_step(t);
        self.lane_change_step();
        let actuations = self.dispatch(t)?;
        self.apply_signals(&actuations)?;
        self.ca_step();
        self.measure();
        self.check_invariants();
        self.vehicle_table.expire((t + 1) as f64);
        self.state.clock += 1;
        Ok(())
    }

    // ---- controllers ----

    fn controllers(&mut self, t: u64) -> Result<(), SimError> {
        let roles: Vec<ControllerRole> = self.tos.due(t).cloned().collect();
        for role in roles {
            match role {
                ControllerRole::Edge { scope, .. } => {
                    for node in scope {
                        self.edge_controller(node, t)?;
                    }
                }
                ControllerRole::Central => {
                    if self.control.dynamic_routing {
                        self.central_controller(t)?;
                    }
                }
            }
        }
        Ok(())
    }

    fn lane_len(&self, link: LinkId) -> usize {
        self.state.lattice[&link].cells
    }

    /// Connection a vehicle in (`link`, `lane`) would use onto `next`.
    fn connection_for(&self, node: NodeId, link: LinkId, lane: u8, next: LinkId) -> Option<ConnectionId> {
        let fabric = self.scenario.fabrics.get(&node)?;
        fabric
            .connection_between_links(link, lane, next)
            .or_else(|| {
                fabric.connections.iter().find(|c| {
                    fabric.ports[c.in_port.0 as usize].lane.link == link
                        && fabric.ports[c.out_port.0 as usize].lane.link == next
                })
            })
            .map(|c| c.id)
    }

    fn edge_controller(&mut self, node: NodeId, t: u64) -> Result<(), SimError> {
        let now = t as f64;
        let base = self.scenario.signals.get(&node).ok_or(SimError::UnknownSignal(node))?.clone();
        let cycle = cycle_index(&base, now);
        if self.active.get(&node).is_some_and(|a| a.cycle != cycle) {
            self.active.remove(&node);
            if let Some(p) = self.policies.get_mut(&node) {
                p.table.remove_where(|e| e.version > BASE_VERSION);
            }
        }
        let inbound: Vec<LinkId> = self.scenario.graph.in_link_ids(node).to_vec();

        if self.control.cooperative {
            let mut cells = 0usize;
            let mut present = 0usize;
            let mut platoons = Vec::new();
            // density is taken over the stretch a vehicle covers within the lookahead
            let zone = (self.control.lookahead * f64::from(self.config.v_max_human.max(self.config.v_max_av))).ceil() as usize;
            for &l in &inbound {
                let lat = &self.state.lattice[&l];
                let from = lat.cells.saturating_sub(zone);
                cells += (lat.cells - from) * lat.lanes.len();
                for (j, lane) in lat.lanes.iter().enumerate() {
                    let mut by_phase: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
                    present += lane[from..].iter().filter(|s| s.is_some()).count();
                    for (c, slot) in lane.iter().enumerate() {
                        let Some(slot) = slot else { continue };
                        let v = self.state.vehicles[*slot].as_ref().expect("occupant exists");
                        if !v.class.is_connected() {
                            continue;
                        }
                        let Some(next) = v.next_link() else { continue };
                        let Some(conn) = self.connection_for(node, l, j as u8, next) else { continue };
                        let Some(idx) = phase_of(&base, conn) else { continue };
                        let vmax = f64::from(v.v_max(&self.config).max(1));
                        let arrival = now + ((lat.cells - c) as f64 / vmax).ceil();
                        if arrival - now > self.control.lookahead {
                            continue;
                        }
                        let e = by_phase.entry(idx).or_insert((arrival, 0));
                        e.0 = e.0.max(arrival);
                        e.1 += 1;
                    }
                    platoons.extend(by_phase.into_iter().map(|(phase_index, (arrival, size))| ApproachingPlatoon {
                        phase_index,
                        arrival,
                        size,
                    }));
                }
            }
            let density = if cells == 0 { 0.0 } else { present as f64 / cells as f64 };
            let proposal = cooperative_signal_control(&base, now, &platoons, density, &self.control.cooperative_params());
            let current = self.active.get(&node).map_or(&base, |a| &a.plan);
            let longer = proposal
                .phases
                .iter()
                .zip(&current.phases)
                .any(|(p, c)| p.green > c.green + 1e-9);
            if longer {
                // keep what was already granted this cycle
                let mut merged = current.clone();
                for (m, p) in merged.phases.iter_mut().zip(&proposal.phases) {
                    if p.green > m.green {
                        m.red -= p.green - m.green;
                        m.green = p.green;
                    }
                }
                let entries = compile_signal_plan(&merged, t + BASE_VERSION + 1)?;
                let policies = self.policies.get_mut(&node).expect("signalized node has a fabric");
                policies.table.remove_where(|e| e.version > BASE_VERSION);
                policies.table.install_all(entries)?;
                self.active.insert(node, ActivePlan { plan: merged, cycle });
            }
        }

        if self.control.advisories {
            let plan = self.signal_plan(node).expect("checked above").clone();
            let mut reports = Vec::new();
            let mut contexts = BTreeMap::new();
            for &l in &inbound {
                let lat = &self.state.lattice[&l];
                let limit = self.scenario.graph.link(l).expect("indexed").speed_limit;
                for (j, lane) in lat.lanes.iter().enumerate() {
                    for (c, slot) in lane.iter().enumerate() {
                        let Some(slot) = slot else { continue };
                        let v = self.state.vehicles[*slot].as_ref().expect("occupant exists");
                        if !v.class.is_connected() {
                            continue;
                        }
                        let Some(next) = v.next_link() else { continue };
                        let Some(conn) = self.connection_for(node, l, j as u8, next) else { continue };
                        let Some(idx) = phase_of(&plan, conn) else { continue };
                        let (start, end) = plan.next_green(idx, now);
                        let (after, _) = plan.next_green(idx, end);
                        // a slowed vehicle holds up everyone behind it, so
                        // only lane leaders are advised
                        if lane[c + 1..].iter().any(Option::is_some) {
                            continue;
                        }
                        let ahead = SignalAhead {
                            distance_m: (lat.cells - c) as f64 * self.config.cell_length,
                            green_in: start - now,
                            green_for: end - start,
                            next_green_in: after - now,
                        };
                        // The lattice only knows whole cells per tick. A slowed
                        // vehicle gains only if the rounded speed brings it to
                        // the stop line right as its green starts; later than
                        // that it would have done better waiting there.
                        let dist = (lat.cells - c) as f64;
                        let vmax = v.v_max(&self.config).max(1);
                        let cells = self.config.advisory_cells(green_wave_advisory(&ahead, limit)).min(vmax);
                        let fast = now + (dist / f64::from(vmax)).ceil();
                        if cells < vmax {
                            let slow = now + (dist / f64::from(cells)).ceil();
                            let (onset, _) = plan.next_green(idx, fast);
                            if plan.phase_color(idx, fast) == SignalColor::Green || slow < onset || slow > onset + 1.0 {
                                continue;
                            }
                        }
                        reports.push(self.report(v.id, t));
                        contexts.insert(v.id, VehicleContext {
                            remaining_route: Vec::new(),
                            speed_limit_kmh: limit,
                            signal: Some(ahead),
                        });
                    }
                }
            }
            self.vehicle_table.install_all(vehicle_controller_step(&reports, &contexts, t)?)?;
        }
        Ok(())
    }

    fn report(&self, id: VehicleId, t: u64) -> VehicleReport {
        let v = self.state.vehicles[id.0 as usize].as_ref().expect("on network");
        VehicleReport {
            vehicle: v.id,
            class: v.class,
            link: v.link,
            lane: v.lane,
            cell: v.cell as u32,
            speed: f64::from(v.speed) * self.config.cell_length / self.config.tick,
            acceleration: 0.0,
            steering: 0,
            timestamp: t,
        }
    }

    /// Graph whose time metric reflects current link densities.
    fn congestion_view(&self) -> Result<Option<(RoadGraph, usize)>, SimError> {
        let graph = &self.scenario.graph;
        let Some(k) = graph.metric_index(TIME) else {
            return Ok(None);
        };
        let mut view = graph.clone();
        for l in graph.links() {
            let lat = &self.state.lattice[&l.id];
            let present = lat.lanes.iter().flatten().filter(|s| s.is_some()).count();
            let density = present as f64 / (lat.cells * lat.lanes.len()) as f64;
            let mut values = l.metric_values.clone();
            values[k] = l.free_flow_time() * (1.0 + CONGESTION_WEIGHT * density);
            view = view
                .with_link_values(l.id, values)
                .map_err(|e| SimError::Config(e.to_string()))?;
        }
        Ok(Some((view, k)))
    }

    /// Congestion-aware routes for connected vehicles with a destination.
    fn central_controller(&mut self, t: u64) -> Result<(), SimError> {
        let mut contexts: BTreeMap<VehicleId, VehicleContext> = BTreeMap::new();
        let candidates: Vec<VehicleId> = self
            .state
            .vehicles()
            .filter(|v| v.class.is_connected() && !v.cyclic && v.next_link().is_some())
            .map(|v| v.id)
            .collect();
        if !candidates.is_empty() {
            if let Some((view, k)) = self.congestion_view()? {
                for id in candidates {
                    let v = self.state.vehicles[id.0 as usize].as_ref().expect("on network");
                    let from = view.link(v.link).expect("indexed").to;
                    let Ok(dest) = self.scenario.hierarchy.resolve(&view, v.destination) else { continue };
                    if from == dest {
                        continue;
                    }
                    if let Some(links) = onward_route(&self.scenario, &view, v.link, dest, k) {
                        contexts.insert(id, VehicleContext {
                            remaining_route: links,
                            speed_limit_kmh: 0.0,
                            signal: None,
                        });
                    }
                }
            }
        }
        let reports: Vec<VehicleReport> = contexts.keys().map(|id| self.report(*id, t)).collect();
        self.vehicle_table.install_all(vehicle_controller_step(&reports, &contexts, t)?)?;
        Ok(())
    }

    // ---- vehicles ----

    /// Connected vehicles adopt the route segments and speed advisories
    /// addressed to them this tick.
    fn route_follow_step(&mut self, t: u64) {
        let now = t as f64;
        let graph = &self.scenario.graph;
        for v in self.state.vehicles.iter_mut().flatten() {
            if !v.class.is_connected() {
                continue;
            }
            let mut advisory = None;
            let mut segment = None;
            for e in self
                .vehicle_table
                .matching(RoadRef::Link(v.link), Some(v.lane), now, Some((v.id, v.class)))
            {
                match &e.action {
                    Action::SpeedAdvisory { kmh } if advisory.is_none() => advisory = Some(*kmh),
                    Action::RouteSegment { links } if segment.is_none() => segment = Some(links.clone()),
                    _ => {}
                }
            }
            v.advisory = advisory.map(|kmh| self.config.advisory_cells(kmh));
            if let Some(links) = segment {
                let mut at = graph.link(v.link).expect("indexed").to;
                let continues = links.iter().all(|l| match graph.link(*l) {
                    Ok(link) if link.from == at => {
                        at = link.to;
                        true
                    }
                    _ => false,
                });
                if continues && !links.is_empty() && !v.cyclic {
                    v.route = std::iter::once(v.link).chain(links).collect();
                    v.route_pos = 0;
                }
            }
        }
    }

    /// Empty cells ahead of `cell` in a lane; reaching the link end counts
    /// as open road.
    fn gap_ahead(lat: &LinkLattice, lane: usize, cell: usize, open: usize) -> usize {
        let row = &lat.lanes[lane];
        match row[cell + 1..].iter().position(Option::is_some) {
            Some(k) => k,
            None => lat.cells - 1 - cell + open,
        }
    }

    /// Symmetric lane changing: a vehicle whose lane blocks it moves to an
    /// adjacent lane with more room if the vehicle behind there can still
    /// stop. Lanes are scanned ascending, cells from the front.
    pub fn lane_change_step(&mut self) {
        let open = usize::from(self.config.v_max_human.max(self.config.v_max_av)) + 1;
        let links: Vec<LinkId> = self.state.lattice.keys().copied().collect();
        for l in links {
            let lanes = self.state.lattice[&l].lanes.len();
            if lanes < 2 {
                continue;
            }
            let mut moved: BTreeSet<usize> = BTreeSet::new();
            for j in 0..lanes {
                for c in (0..self.state.lattice[&l].cells).rev() {
                    let lat = &self.state.lattice[&l];
                    let Some(slot) = lat.lanes[j][c] else { continue };
                    if moved.contains(&slot) {
                        continue;
                    }
                    let v = self.state.vehicles[slot].as_ref().expect("occupant exists");
                    let safe = |target: usize| {
                        lat.lanes[target][c].is_none()
                            && lat.lanes[target][..c].iter().rposition(Option::is_some).is_none_or(|b| {
                                let follower = self.state.vehicles[lat.lanes[target][b].expect("occupied")]
                                    .as_ref()
                                    .expect("occupant exists");
                                c - b - 1 >= usize::from(follower.speed)
                            })
                    };
                    let want = usize::from((v.speed + 1).min(v.v_max(&self.config)));
                    let here = Self::gap_ahead(lat, j, c, open);
                    if here >= want {
                        continue;
                    }
                    let mut best: Option<(usize, usize)> = None;
                    for target in [j.checked_sub(1), (j + 1 < lanes).then_some(j + 1)].into_iter().flatten() {
                        let gap = Self::gap_ahead(lat, target, c, open);
                        if gap > here && safe(target) && best.is_none_or(|(_, g)| gap > g) {
                            best = Some((target, gap));
                        }
                    }
                    if let Some((target, _)) = best {
                        let lat = self.state.lattice.get_mut(&l).expect("exists");
                        lat.lanes[j][c] = None;
                        lat.lanes[target][c] = Some(slot);
                        self.state.vehicles[slot].as_mut().expect("exists").lane = target as u8;
                        moved.insert(slot);
                    }
                }
            }
        }
    }

    /// Fills fabric queues from the vehicles near each stop line and runs
    /// every router's dispatching engine.
    fn dispatch(&mut self, t: u64) -> Result<Vec<Actuation>, SimError> {
        let reach = usize::from(self.config.v_max_human.max(self.config.v_max_av));
        let mut actuations = Vec::new();
        self.grants.clear();
        let nodes: Vec<NodeId> = self.scenario.fabrics.keys().copied().collect();
        for node in nodes {
            let ports: Vec<_> = self.scenario.fabrics[&node]
                .input_ports()
                .map(|p| (p.id, p.lane))
                .collect();
            let mut queues = Vec::new();
            for (port, binding) in ports {
                let lat = &self.state.lattice[&binding.link];
                let row = &lat.lanes[binding.lane as usize];
                let mut q = Vec::new();
                for c in (lat.cells.saturating_sub(reach)..lat.cells).rev() {
                    let Some(slot) = row[c] else { continue };
                    let v = self.state.vehicles[slot].as_ref().expect("occupant exists");
                    let Some(next) = v.next_link() else { continue };
                    if let Some(conn) = self.connection_for(node, binding.link, binding.lane, next) {
                        q.push(QueuedVehicle {
                            vehicle: v.id,
                            connection: conn,
                        });
                    }
                }
                queues.push((port, q));
            }
            let fabric = self.scenario.fabrics.get_mut(&node).expect("listed");
            for (port, q) in queues {
                fabric.set_queue(port, q).map_err(SdtError::from)?;
            }
            let d = dispatching_engine_step(fabric, &self.policies[&node], t)?;
            self.grants.insert(node, d.grants.into_iter().collect());
            actuations.extend(d.actuations);
        }
        Ok(actuations)
    }

    /// Updates signal heads from this tick's actuations.
    pub fn apply_signals(&mut self, actuations: &[Actuation]) -> Result<(), SimError> {
        for a in actuations {
            if !self.scenario.signals.contains_key(&a.node) {
                return Err(SimError::UnknownSignal(a.node));
            }
            self.state.signal_heads.insert(a.node, (a.phase, a.color));
        }
        Ok(())
    }

    /// Whether a vehicle at the end of `link` may cross onto `next` now, and
    /// through which connection.
    fn crossing(&self, link: LinkId, lane: u8, next: LinkId) -> (bool, NodeId, Option<ConnectionId>) {
        let node = self.scenario.graph.link(link).expect("indexed").to;
        if !self.scenario.fabrics.contains_key(&node) {
            return (true, node, None);
        }
        match self.connection_for(node, link, lane, next) {
            Some(c) => (self.grants.get(&node).is_some_and(|g| g.contains(&c)), node, Some(c)),
            None => (false, node, None),
        }
    }

    /// Lane a vehicle lands in after crossing onto `next`.
    fn landing_lane(&self, node: NodeId, link: LinkId, lane: u8, next: LinkId) -> u8 {
        let exact = self
            .scenario
            .fabrics
            .get(&node)
            .and_then(|f| f.connection_between_links(link, lane, next).map(|c| f.ports[c.out_port.0 as usize].lane));
        match exact {
            Some(b) if b.link == next => b.lane,
            _ => lane.min(self.state.lattice[&next].lanes.len() as u8 - 1),
        }
    }

    /// One parallel update of every lane: accelerate, limit by gap, random
    /// slowdown for human drivers, move.
    pub fn ca_step(&mut self) {
        let mut moves: Vec<Move> = Vec::with_capacity(self.state.vehicles.len());
        let mut reserved: BTreeSet<(LinkId, u8, usize)> = BTreeSet::new();
        // new speed of every vehicle already updated this tick
        let mut decided: Vec<Option<u8>> = vec![None; self.state.vehicles.len()];
        for i in 0..self.order.len() {
            let l = self.order[i];
            let n = self.lane_len(l);
            let lanes = self.state.lattice[&l].lanes.len();
            for j in 0..lanes {
                // front vehicle first
                let mut leader: Option<(usize, u8, bool)> = None; // cell, new speed, driverless
                for c in (0..n).rev() {
                    let Some(slot) = self.state.lattice[&l].lanes[j][c] else { continue };
                    let v = self.state.vehicles[slot].as_ref().expect("occupant exists");
                    let vmax = v.v_max(&self.config);
                    let mut speed = (v.speed + 1).min(vmax);
                    let d_end = n - 1 - c;
                    if let Some((lc, lv, l_av)) = leader {
                        let mut gap = lc - c - 1;
                        if v.class.is_driverless() && l_av {
                            gap += usize::from(lv);
                        }
                        speed = speed.min(gap.min(255) as u8);
                    }
                    let mut cross = None;
                    if usize::from(speed) > d_end {
                        let limit = match v.next_link() {
                            None => usize::MAX,
                            Some(next) => {
                                let (open, node, conn) = self.crossing(l, j as u8, next);
                                if open {
                                    let to_lane = self.landing_lane(node, l, j as u8, next);
                                    let row = &self.state.lattice[&next].lanes[to_lane as usize];
                                    let open_cell = |k: usize| row[k].is_none() && !reserved.contains(&(next, to_lane, k));
                                    let mut free = (0..row.len()).take_while(|k| open_cell(*k)).count();
                                    // a driverless leader already past the stop line is anticipated too
                                    if let Some(Some(s)) = row.get(free).copied().filter(|_| v.class.is_driverless()) {
                                        let ahead = self.state.vehicles[s].as_ref().expect("occupant exists");
                                        if ahead.class.is_driverless() {
                                            // not yet updated: it moves at least min(speed, gap)
                                            let lv = decided[s].unwrap_or_else(|| {
                                                let gap = row[free + 1..].iter().take_while(|c| c.is_none()).count();
                                                ahead.speed.min(ahead.v_max(&self.config)).min(gap.min(255) as u8)
                                            });
                                            let reach = (free + usize::from(lv)).min(row.len());
                                            free += (free..reach)
                                                .take_while(|k| !reserved.contains(&(next, to_lane, *k)))
                                                .count();
                                        }
                                    }
                                    cross = Some((node, conn, next, to_lane));
                                    d_end + free
                                } else {
                                    d_end
                                }
                            }
                        };
                        speed = speed.min(limit.min(255) as u8);
                    }
                    if !v.class.is_driverless() && self.config.p_slow > 0.0 {
                        let draw: f64 = self.state.rng.random();
                        if draw < self.config.p_slow {
                            speed = speed.saturating_sub(1);
                        }
                    }
                    let target = c + usize::from(speed);
                    let mv = if target < n {
                        Move {
                            slot,
                            speed,
                            link: l,
                            lane: j as u8,
                            cell: target,
                            crossed: None,
                            arrived: false,
                        }
                    } else if let Some((node, conn, next, to_lane)) = cross {
                        let cell = target - n;
                        reserved.insert((next, to_lane, cell));
                        Move {
                            slot,
                            speed,
                            link: next,
                            lane: to_lane,
                            cell,
                            crossed: Some((node, conn)),
                            arrived: false,
                        }
                    } else {
                        Move {
                            slot,
                            speed,
                            link: l,
                            lane: j as u8,
                            cell: target,
                            crossed: None,
                            arrived: true,
                        }
                    };
                    leader = Some((c, speed, v.class.is_driverless()));
                    decided[slot] = Some(speed);
                    moves.push(mv);
                }
            }
        }

        for lat in self.state.lattice.values_mut() {
            for row in &mut lat.lanes {
                row.iter_mut().for_each(|c| *c = None);
            }
        }
        for m in moves {
            if let Some((node, Some(conn))) = m.crossed {
                if self.scenario.signals.contains_key(&node) && !self.crossing_allowed_by_head(node, conn) {
                    self.audit.red_crossings += 1;
                }
            }
            let v = self.state.vehicles[m.slot].as_mut().expect("moving vehicle exists");
            v.speed = m.speed;
            if m.arrived {
                self.state.arrived.push(v.id);
                self.state.vehicles[m.slot] = None;
                continue;
            }
            if m.crossed.is_some() || m.link != v.link {
                v.advance_route();
            }
            v.link = m.link;
            v.lane = m.lane;
            v.cell = m.cell;
            let cell = &mut self.state.lattice.get_mut(&m.link).expect("exists").lanes[m.lane as usize][m.cell];
            if cell.is_some() {
                self.audit.double_occupancy += 1;
            }
            *cell = Some(m.slot);
        }
    }

    /// Checks a crossing against the signal head, independently of the
    /// grants that allowed it.
    fn crossing_allowed_by_head(&self, node: NodeId, conn: ConnectionId) -> bool {
        let Some((phase, color)) = self.state.signal_heads.get(&node) else {
            return false;
        };
        *color == SignalColor::Green
            && self.scenario.signals[&node]
                .phases
                .iter()
                .any(|p| p.id == *phase && p.connections.contains(&conn))
    }

    fn measure(&mut self) {
        let clock = self.state.clock;
        if clock < self.config.warmup {
            return;
        }
        for v in self.state.vehicles.iter().flatten() {
            self.state.acc.add(v.class, v.speed);
        }
        let elapsed = clock + 1 - self.config.warmup;
        if elapsed % self.config.measure_interval == 0 {
            let idx = elapsed / self.config.measure_interval - 1;
            let m = self.state.acc.finish(idx, &self.config);
            self.state.measurements.push(m);
        }
    }

    fn check_invariants(&mut self) {
        self.audit.ticks += 1;
        let on = self.state.on_network();
        if on + self.state.arrived.len() != self.state.injected {
            self.audit.conservation_violations += 1;
        }
        let occupied = self
            .state
            .lattice
            .values()
            .flat_map(|l| l.lanes.iter().flatten())
            .filter(|c| c.is_some())
            .count();
        if occupied != on {
            self.audit.double_occupancy += 1;
        }
        for (slot, v) in self.state.vehicles.iter().enumerate() {
            let Some(v) = v else { continue };
            let here = self.state.lattice[&v.link].lanes[v.lane as usize][v.cell];
            if here != Some(slot) {
                self.audit.double_occupancy += 1;
            }
            let cap = if v.class.is_driverless() {
                self.config.v_max_av
            } else {
                self.config.v_max_human
            };
            if v.speed > cap || v.advisory.is_some_and(|a| v.speed > a) {
                self.audit.speed_violations += 1;
            }
        }
    }
}
