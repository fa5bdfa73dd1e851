//! Software-defined control plane.
//!
//! Controllers never touch simulation state. They emit flow-table entries
//! (signal colors, speed advisories, lane assignments, route segments) that
//! the dispatching engine of each router turns into grants and actuations.

mod codec;
mod control;
mod engine;
mod plan;

pub use codec::{decode_message, encode_message, CodecError, Message, FRAME_MAGIC, FRAME_VERSION};
pub use control::{
    cooperative_signal_control, green_wave_advisory, vehicle_controller_step, ApproachingPlatoon, ControllerRole,
    CooperativeParams, SignalAhead, Tos, VehicleContext, VehicleReport, ADVISORY_FLOOR_KMH, CENTRAL_PERIOD,
};
pub use engine::{
    dispatching_engine_step, Actuation, Dispatch, EngineOutput, MatchingPolicy, Policies, RoutePolicy, RoutingEngine,
};
pub use plan::{compile_signal_plan, decompile_signal_plan, Phase, SignalColor, SignalPlan};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fabric::{ConnectionId, FabricError};
use crate::network::{LinkId, NodeId, VehicleClass, VehicleId};
use crate::routing::RoutingError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SdtError {
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("policy mismatch: {0}")]
    PolicyMismatch(String),
    #[error("unknown vehicle {0}")]
    UnknownVehicle(VehicleId),
    #[error(transparent)]
    Fabric(#[from] FabricError),
    #[error(transparent)]
    Routing(#[from] RoutingError),
}

/// What part of the road an entry governs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoadRef {
    Intersection(NodeId),
    Link(LinkId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VehicleMatch {
    Any,
    Vehicle(VehicleId),
    Class(VehicleClass),
}

impl VehicleMatch {
    pub fn matches(&self, vehicle: Option<(VehicleId, VehicleClass)>) -> bool {
        match (self, vehicle) {
            (VehicleMatch::Any, _) => true,
            (VehicleMatch::Vehicle(id), Some((v, _))) => *id == v,
            (VehicleMatch::Class(c), Some((_, k))) => *c == k,
            _ => false,
        }
    }
}

/// Half-open interval `[start, start + length)` in simulation seconds. With a
/// period the window repeats every `period` seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeWindow {
    pub start: f64,
    pub length: f64,
    pub period: Option<f64>,
}

impl TimeWindow {
    pub fn once(start: f64, length: f64) -> Self {
        Self { start, length, period: None }
    }

    pub fn periodic(start: f64, length: f64, period: f64) -> Self {
        Self {
            start,
            length,
            period: Some(period),
        }
    }

    pub fn end(&self) -> f64 {
        self.start + self.length
    }

    pub fn is_valid(&self) -> bool {
        let base = self.start.is_finite() && self.length.is_finite() && self.length > 0.0;
        match self.period {
            None => base,
            Some(p) => base && p.is_finite() && p > 0.0 && self.length <= p,
        }
    }

    pub fn contains(&self, t: f64) -> bool {
        match self.period {
            None => t >= self.start && t < self.end(),
            Some(p) => (t - self.start).rem_euclid(p) < self.length,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowMatch {
    pub road: RoadRef,
    /// `None` matches every lane.
    pub lane: Option<u8>,
    pub window: TimeWindow,
    pub vehicle: VehicleMatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    SetSignal {
        phase: u32,
        /// Position of the phase within its plan.
        index: u32,
        color: SignalColor,
        connections: Vec<ConnectionId>,
    },
    SpeedAdvisory {
        kmh: f64,
    },
    LaneAssignment {
        lane: u8,
    },
    RouteSegment {
        links: Vec<LinkId>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowTableEntry {
    pub id: u64,
    #[serde(rename = "match")]
    pub matcher: FlowMatch,
    pub action: Action,
    pub priority: i32,
    pub version: u64,
}

impl FlowTableEntry {
    fn rank(&self) -> (std::cmp::Reverse<i32>, std::cmp::Reverse<u64>, u64) {
        (std::cmp::Reverse(self.priority), std::cmp::Reverse(self.version), self.id)
    }
}

/// Ordered policy rows. Lookups return the first matching entry in
/// (priority desc, version desc, id) order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FlowTable {
    entries: Vec<FlowTableEntry>,
}

impl FlowTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> &[FlowTableEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Installs `entry`. An entry with the same match, priority and action
    /// kind is replaced only by a strictly newer version; an older one is
    /// dropped and `false` returned.
    pub fn install(&mut self, entry: FlowTableEntry) -> Result<bool, SdtError> {
        if !entry.matcher.window.is_valid() {
            return Err(SdtError::Validation(format!("entry {} has an empty or malformed time window", entry.id)));
        }
        if let Some(pos) = self
            .entries
            .iter()
            .position(|e| {
                e.matcher == entry.matcher
                    && e.priority == entry.priority
                    && std::mem::discriminant(&e.action) == std::mem::discriminant(&entry.action)
            })
        {
            if self.entries[pos].version >= entry.version {
                return Ok(false);
            }
            self.entries.remove(pos);
        }
        let at = self.entries.partition_point(|e| e.rank() < entry.rank());
        self.entries.insert(at, entry);
        Ok(true)
    }

    pub fn install_all(&mut self, entries: impl IntoIterator<Item = FlowTableEntry>) -> Result<(), SdtError> {
        for e in entries {
            self.install(e)?;
        }
        Ok(())
    }

    /// Drops one-shot entries whose window ended at or before `t`.
    pub fn expire(&mut self, t: f64) {
        self.entries
            .retain(|e| e.matcher.window.period.is_some() || e.matcher.window.end() > t);
    }

    pub fn remove_where(&mut self, pred: impl Fn(&FlowTableEntry) -> bool) {
        self.entries.retain(|e| !pred(e));
    }

    /// Every entry matching, best first.
    pub fn matching<'a>(
        &'a self,
        road: RoadRef,
        lane: Option<u8>,
        t: f64,
        vehicle: Option<(VehicleId, VehicleClass)>,
    ) -> impl Iterator<Item = &'a FlowTableEntry> + 'a {
        self.entries.iter().filter(move |e| {
            let m = &e.matcher;
            m.road == road
                && (m.lane.is_none() || lane.is_none() || m.lane == lane)
                && m.window.contains(t)
                && m.vehicle.matches(vehicle)
        })
    }

    pub fn lookup(
        &self,
        road: RoadRef,
        lane: Option<u8>,
        t: f64,
        vehicle: Option<(VehicleId, VehicleClass)>,
    ) -> Option<&FlowTableEntry> {
        self.matching(road, lane, t, vehicle).next()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(id: u64, priority: i32, version: u64, kmh: f64) -> FlowTableEntry {
        FlowTableEntry {
            id,
            matcher: FlowMatch {
                road: RoadRef::Link(LinkId(1)),
                lane: None,
                window: TimeWindow::once(0.0, 10.0),
                vehicle: VehicleMatch::Any,
            },
            action: Action::SpeedAdvisory { kmh },
            priority,
            version,
        }
    }

    #[test]
    fn windows() {
        let w = TimeWindow::periodic(60.0, 10.0, 65.0);
        assert!(w.contains(60.0) && w.contains(69.9) && !w.contains(70.0));
        assert!(w.contains(0.0) && w.contains(4.9) && !w.contains(5.0));
        assert!(!TimeWindow::once(3.0, 0.0).is_valid());
    }

    #[test]
    fn versions_are_monotone() {
        let mut t = FlowTable::new();
        assert!(t.install(entry(1, 0, 5, 30.0)).unwrap());
        assert!(!t.install(entry(2, 0, 4, 40.0)).unwrap());
        assert_eq!(t.lookup(RoadRef::Link(LinkId(1)), None, 1.0, None).unwrap().id, 1);
        assert!(t.install(entry(3, 0, 6, 50.0)).unwrap());
        assert_eq!(t.len(), 1);
        t.install(entry(4, 9, 1, 20.0)).unwrap();
        assert_eq!(t.lookup(RoadRef::Link(LinkId(1)), Some(2), 1.0, None).unwrap().id, 4);
        t.expire(10.0);
        assert!(t.is_empty());
    }
}
