use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{cells_for, onward_route, SimConfig, SimError};
use crate::network::{LinkId, NodeId, TransportAddress, VehicleClass, VehicleId};
use crate::scenario::Scenario;
use crate::sdt::SignalColor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vehicle {
    pub id: VehicleId,
    pub class: VehicleClass,
    pub link: LinkId,
    pub lane: u8,
    pub cell: usize,
    /// cells per tick
    pub speed: u8,
    pub route: Vec<LinkId>,
    /// Index of `link` in `route`.
    pub route_pos: usize,
    /// The route repeats once finished.
    pub cyclic: bool,
    pub origin: TransportAddress,
    pub destination: TransportAddress,
    pub priority: i32,
    /// Speed cap from an active advisory, cells per tick.
    pub advisory: Option<u8>,
}

impl Vehicle {
    pub fn next_link(&self) -> Option<LinkId> {
        match self.route.get(self.route_pos + 1) {
            Some(l) => Some(*l),
            None if self.cyclic => self.route.first().copied(),
            None => None,
        }
    }

    /// Links after the current one, one lap at most for cyclic routes.
    pub fn remaining_route(&self) -> Vec<LinkId> {
        let mut out: Vec<LinkId> = self.route[self.route_pos + 1..].to_vec();
        if self.cyclic {
            out.extend_from_slice(&self.route[..self.route_pos]);
        }
        out
    }

    pub fn v_max(&self, config: &SimConfig) -> u8 {
        let base = if self.class.is_driverless() {
            config.v_max_av
        } else {
            config.v_max_human
        };
        self.advisory.map_or(base, |a| a.min(base))
    }

    pub(crate) fn advance_route(&mut self) {
        self.route_pos += 1;
        if self.route_pos >= self.route.len() && self.cyclic {
            self.route_pos = 0;
        }
    }
}

/// One link's lanes, each a row of cells holding vehicle slots.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkLattice {
    pub cells: usize,
    pub lanes: Vec<Vec<Option<usize>>>,
}

/// Mean speeds over one measurement interval. `None` means no vehicle was
/// observed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub interval: u64,
    pub mean_speed_kmh: Option<f64>,
    pub vehicle_ticks: u64,
    pub per_class: BTreeMap<VehicleClass, (Option<f64>, u64)>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub(crate) struct MeasureAcc {
    pub sum: BTreeMap<VehicleClass, (u64, u64)>,
}

impl MeasureAcc {
    pub fn add(&mut self, class: VehicleClass, speed: u8) {
        let e = self.sum.entry(class).or_default();
        e.0 += u64::from(speed);
        e.1 += 1;
    }

    pub fn finish(&mut self, interval: u64, config: &SimConfig) -> Measurement {
        let total: (u64, u64) = self.sum.values().fold((0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
        let mean = |s: (u64, u64)| (s.1 > 0).then(|| config.kmh(s.0 as f64 / s.1 as f64));
        let m = Measurement {
            interval,
            mean_speed_kmh: mean(total),
            vehicle_ticks: total.1,
            per_class: self.sum.iter().map(|(c, s)| (*c, (mean(*s), s.1))).collect(),
        };
        self.sum.clear();
        m
    }
}

#[derive(Debug, Clone)]
pub struct SimState {
    pub clock: u64,
    /// Slot-indexed; `None` once the vehicle has arrived.
    pub vehicles: Vec<Option<Vehicle>>,
    pub lattice: BTreeMap<LinkId, LinkLattice>,
    /// Phase id and color shown at each signalized node.
    pub signal_heads: BTreeMap<NodeId, (u32, SignalColor)>,
    pub arrived: Vec<VehicleId>,
    pub injected: usize,
    pub measurements: Vec<Measurement>,
    pub(crate) acc: MeasureAcc,
    pub(crate) rng: ChaCha8Rng,
}

impl SimState {
    pub fn on_network(&self) -> usize {
        self.vehicles.iter().filter(|v| v.is_some()).count()
    }

    pub fn vehicles(&self) -> impl Iterator<Item = &Vehicle> {
        self.vehicles.iter().flatten()
    }

    pub fn occupant(&self, link: LinkId, lane: u8, cell: usize) -> Option<&Vehicle> {
        let slot = self.lattice.get(&link)?.lanes.get(lane as usize)?.get(cell).copied()??;
        self.vehicles[slot].as_ref()
    }

    /// Fingerprint of positions and speeds, for rerun comparisons.
    pub fn positions(&self) -> Vec<(VehicleId, LinkId, u8, usize, u8)> {
        self.vehicles().map(|v| (v.id, v.link, v.lane, v.cell, v.speed)).collect()
    }
}

/// Places `config.vehicles` vehicles on distinct cells chosen uniformly at
/// random, all at rest. With loops in the scenario every vehicle circulates
/// on the loop through its start link; otherwise it gets a random reachable
/// destination and a shortest-distance route there.
pub fn init_scenario(scenario: &Scenario, config: &SimConfig, av_fraction: f64) -> Result<SimState, SimError> {
    config.validate()?;
    if !(0.0..=1.0).contains(&av_fraction) {
        return Err(SimError::Config(format!("AV fraction {av_fraction} outside [0, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let graph = &scenario.graph;
    let lattice: BTreeMap<LinkId, LinkLattice> = graph
        .links()
        .map(|l| {
            let cells = cells_for(l.length, config.cell_length);
            (l.id, LinkLattice {
                cells,
                lanes: vec![vec![None; cells]; l.lane_count as usize],
            })
        })
        .collect();

    let on_loop: BTreeMap<LinkId, usize> = scenario
        .loops
        .iter()
        .enumerate()
        .rev()
        .flat_map(|(i, lp)| lp.iter().map(move |l| (*l, i)))
        .collect();
    let mut slots: Vec<(LinkId, u8, usize)> = lattice
        .iter()
        .filter(|(l, _)| scenario.loops.is_empty() || on_loop.contains_key(l))
        .flat_map(|(l, lat)| (0..lat.lanes.len()).flat_map(move |j| (0..lat.cells).map(move |c| (*l, j as u8, c))))
        .collect();
    if config.vehicles > slots.len() {
        return Err(SimError::Overcrowded {
            vehicles: config.vehicles,
            cells: slots.len(),
        });
    }
    slots.shuffle(&mut rng);
    slots.truncate(config.vehicles);

    let n = config.vehicles;
    let n_av = (av_fraction * n as f64).round() as usize;
    let n_conn = (config.connected_fraction * (n - n_av) as f64).round() as usize;
    let mut classes: Vec<VehicleClass> = std::iter::repeat_n(VehicleClass::DriverlessConnected, n_av)
        .chain(std::iter::repeat_n(VehicleClass::HumanConnected, n_conn))
        .chain(std::iter::repeat_n(VehicleClass::Human, n - n_av - n_conn))
        .collect();
    classes.shuffle(&mut rng);

    let nodes: Vec<NodeId> = graph.nodes().map(|n| n.id).collect();
    let mut state = SimState {
        clock: 0,
        vehicles: Vec::with_capacity(n),
        lattice,
        signal_heads: BTreeMap::new(),
        arrived: Vec::new(),
        injected: n,
        measurements: Vec::new(),
        acc: MeasureAcc::default(),
        rng: ChaCha8Rng::seed_from_u64(0),
    };
    for (i, ((link, lane, cell), class)) in slots.into_iter().zip(classes).enumerate() {
        let l = graph.link(link).expect("lattice built from graph");
        let (route, route_pos, cyclic, dest_node) = match on_loop.get(&link) {
            Some(&k) => {
                let lp = &scenario.loops[k];
                let pos = lp.iter().position(|x| *x == link).expect("indexed");
                (lp.clone(), pos, true, graph.link(*lp.last().expect("nonempty")).expect("validated").to)
            }
            None => {
                let mut route = vec![link];
                let mut dest = l.to;
                for _ in 0..8 {
                    let cand = nodes[rand::Rng::random_range(&mut rng, 0..nodes.len())];
                    if cand == l.to {
                        continue;
                    }
                    if let Some(links) = onward_route(scenario, graph, link, cand, 0) {
                        route.extend(links);
                        dest = cand;
                        break;
                    }
                }
                (route, 0, false, dest)
            }
        };
        let id = VehicleId(i as u32);
        state.vehicles.push(Some(Vehicle {
            id,
            class,
            link,
            lane,
            cell,
            speed: 0,
            route,
            route_pos,
            cyclic,
            origin: scenario.hierarchy.address_of(l.from).expect("partitioned"),
            destination: scenario.hierarchy.address_of(dest_node).expect("partitioned"),
            priority: 0,
            advisory: None,
        }));
        state.lattice.get_mut(&link).expect("exists").lanes[lane as usize][cell] = Some(i);
    }
    state.rng = rng;
    Ok(state)
}
