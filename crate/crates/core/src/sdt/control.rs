use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{Action, FlowMatch, FlowTableEntry, RoadRef, SdtError, SignalPlan, TimeWindow, VehicleMatch};
use crate::network::{LinkId, NodeId, VehicleClass, VehicleId};

/// Lowest speed a green-wave advisory asks for, km/h.
pub const ADVISORY_FLOOR_KMH: f64 = 20.0;

/// The central controller runs once every this many ticks.
pub const CENTRAL_PERIOD: u64 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CooperativeParams {
    /// Cooperation only happens below this vehicle density.
    pub density_threshold: f64,
    pub max_extension: f64,
    pub lookahead: f64,
}

impl Default for CooperativeParams {
    fn default() -> Self {
        Self {
            density_threshold: 0.10,
            max_extension: 10.0,
            lookahead: 15.0,
        }
    }
}

/// A connected platoon heading for the stop line of one phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApproachingPlatoon {
    pub phase_index: usize,
    /// Absolute time at which the platoon's last vehicle reaches the stop line.
    pub arrival: f64,
    pub size: usize,
}

/// Extends the current green of a phase so an approaching connected platoon
/// clears before yellow. The extension is taken from the same phase's red,
/// so the cycle length and offset are unchanged. Decisions are only taken
/// while the green is still showing or yet to come in this cycle.
pub fn cooperative_signal_control(
    plan: &SignalPlan,
    now: f64,
    platoons: &[ApproachingPlatoon],
    density: f64,
    params: &CooperativeParams,
) -> SignalPlan {
    let mut out = plan.clone();
    if !(density < params.density_threshold) {
        return out;
    }
    let base = now - plan.cycle_time(now);
    for (i, phase) in plan.phases.iter().enumerate() {
        let green_end = base + plan.phase_start(i) + phase.green;
        if now >= green_end {
            continue;
        }
        let needed = platoons
            .iter()
            .filter(|p| p.phase_index == i && p.size > 0)
            .filter(|p| p.arrival >= now && p.arrival - now <= params.lookahead)
            .filter(|p| p.arrival >= green_end)
            .map(|p| p.arrival - green_end)
            .fold(0.0, f64::max);
        let ext = needed.min(params.max_extension).min(phase.red);
        if ext > 0.0 {
            out.phases[i].green += ext;
            out.phases[i].red -= ext;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleReport {
    pub vehicle: VehicleId,
    pub class: VehicleClass,
    pub link: LinkId,
    pub lane: u8,
    pub cell: u32,
    /// m/s
    pub speed: f64,
    /// m/s²
    pub acceleration: f64,
    /// -1 left, 0 straight, 1 right
    pub steering: i8,
    pub timestamp: u64,
}

/// The next signal on a vehicle's route, seen from the vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalAhead {
    pub distance_m: f64,
    /// Seconds until green starts; 0 while green.
    pub green_in: f64,
    /// Length of that green.
    pub green_for: f64,
    /// Seconds until the green after that one starts.
    pub next_green_in: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleContext {
    /// Links still to travel after the current one.
    pub remaining_route: Vec<LinkId>,
    pub speed_limit_kmh: f64,
    pub signal: Option<SignalAhead>,
}

/// Green-wave speed toward the next signal: full limit if the vehicle
/// arrives during green anyway, otherwise distance over time to the green it
/// can reach, clamped to `[ADVISORY_FLOOR_KMH, limit]`.
pub fn green_wave_advisory(signal: &SignalAhead, limit_kmh: f64) -> f64 {
    let v_lim = limit_kmh / 3.6;
    let t_lim = signal.distance_m / v_lim;
    let target = if t_lim < signal.green_in {
        signal.distance_m / signal.green_in * 3.6
    } else if t_lim < signal.green_in + signal.green_for {
        limit_kmh
    } else if signal.next_green_in > 0.0 {
        signal.distance_m / signal.next_green_in * 3.6
    } else {
        limit_kmh
    };
    target.clamp(ADVISORY_FLOOR_KMH.min(limit_kmh), limit_kmh)
}

/// Route segments and speed advisories for every connected vehicle. Entries
/// are valid for the tick they are issued in; entry ids are `2·vehicle` for
/// routes and `2·vehicle + 1` for advisories.
pub fn vehicle_controller_step(
    reports: &[VehicleReport],
    contexts: &BTreeMap<VehicleId, VehicleContext>,
    tick: u64,
) -> Result<Vec<FlowTableEntry>, SdtError> {
    let mut out = Vec::new();
    for r in reports {
        if !r.class.is_connected() {
            continue;
        }
        let ctx = contexts.get(&r.vehicle).ok_or(SdtError::UnknownVehicle(r.vehicle))?;
        if ctx.remaining_route.is_empty() && ctx.signal.is_none() {
            continue;
        }
        let matcher = FlowMatch {
            road: RoadRef::Link(r.link),
            lane: None,
            window: TimeWindow::once(tick as f64, 1.0),
            vehicle: VehicleMatch::Vehicle(r.vehicle),
        };
        if !ctx.remaining_route.is_empty() {
            out.push(FlowTableEntry {
                id: u64::from(r.vehicle.0) * 2,
                matcher: matcher.clone(),
                action: Action::RouteSegment {
                    links: ctx.remaining_route.clone(),
                },
                priority: 0,
                version: tick,
            });
        }
        if let Some(s) = &ctx.signal {
            out.push(FlowTableEntry {
                id: u64::from(r.vehicle.0) * 2 + 1,
                matcher,
                action: Action::SpeedAdvisory {
                    kmh: green_wave_advisory(s, ctx.speed_limit_kmh),
                },
                priority: 0,
                version: tick,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerRole {
    Edge { id: u32, scope: BTreeSet<NodeId> },
    Central,
}

/// Edge controllers for local real-time control plus one central
/// controller for network-wide decisions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tos {
    roles: Vec<ControllerRole>,
}

impl Tos {
    /// Edge scopes must partition `signalized`; exactly one central role.
    pub fn new(mut roles: Vec<ControllerRole>, signalized: &BTreeSet<NodeId>) -> Result<Self, SdtError> {
        let centrals = roles.iter().filter(|r| matches!(r, ControllerRole::Central)).count();
        if centrals != 1 {
            return Err(SdtError::Validation(format!("{centrals} central controllers, expected 1")));
        }
        let mut covered = BTreeSet::new();
        let mut ids = BTreeSet::new();
        for r in &roles {
            if let ControllerRole::Edge { id, scope } = r {
                if !ids.insert(*id) {
                    return Err(SdtError::Validation(format!("duplicate edge controller {id}")));
                }
                for n in scope {
                    if !covered.insert(*n) {
                        return Err(SdtError::Validation(format!("{n} is in two edge scopes")));
                    }
                }
            }
        }
        if &covered != signalized {
            return Err(SdtError::Validation("edge scopes do not cover exactly the signalized intersections".into()));
        }
        roles.sort_by_key(|r| match r {
            ControllerRole::Edge { id, .. } => (0, *id),
            ControllerRole::Central => (1, 0),
        });
        Ok(Self { roles })
    }

    /// One edge controller per signalized intersection.
    pub fn per_intersection(signalized: &BTreeSet<NodeId>) -> Self {
        let mut roles: Vec<ControllerRole> = signalized
            .iter()
            .enumerate()
            .map(|(i, n)| ControllerRole::Edge {
                id: i as u32,
                scope: BTreeSet::from([*n]),
            })
            .collect();
        roles.push(ControllerRole::Central);
        Self::new(roles, signalized).expect("partition by construction")
    }

    pub fn roles(&self) -> &[ControllerRole] {
        &self.roles
    }

    /// Controllers to run at `tick`, edges by id first, then central.
    pub fn due(&self, tick: u64) -> impl Iterator<Item = &ControllerRole> {
        self.roles.iter().filter(move |r| match r {
            ControllerRole::Edge { .. } => true,
            ControllerRole::Central => tick % CENTRAL_PERIOD == 0,
        })
    }

    pub fn controlled(&self) -> BTreeSet<NodeId> {
        self.roles
            .iter()
            .flat_map(|r| match r {
                ControllerRole::Edge { scope, .. } => scope.iter().copied().collect(),
                ControllerRole::Central => Vec::new(),
            })
            .collect()
    }
}
