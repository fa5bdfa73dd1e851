use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Action, FlowMatch, FlowTableEntry, RoadRef, SdtError, TimeWindow, VehicleMatch};
use crate::fabric::{ConnectionId, SwitchFabric};
use crate::network::NodeId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalColor {
    Green,
    Yellow,
    Red,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub id: u32,
    pub connections: Vec<ConnectionId>,
    pub green: f64,
    pub yellow: f64,
    pub red: f64,
}

impl Phase {
    pub fn duration(&self) -> f64 {
        self.green + self.yellow + self.red
    }
}

/// Fixed-time plan. Phases run one after another, each showing green, then
/// yellow, then red (clearance) before the next phase starts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalPlan {
    pub intersection: NodeId,
    pub cycle_length: f64,
    pub phases: Vec<Phase>,
    pub offset: f64,
}

const EPS: f64 = 1e-9;

impl SignalPlan {
    pub fn single_phase(intersection: NodeId, connections: Vec<ConnectionId>, green: f64, yellow: f64, red: f64) -> Self {
        Self {
            intersection,
            cycle_length: green + yellow + red,
            phases: vec![Phase {
                id: 1,
                connections,
                green,
                yellow,
                red,
            }],
            offset: 0.0,
        }
    }

    pub fn validate(&self, fabric: Option<&SwitchFabric>) -> Result<(), SdtError> {
        let bad = |m: String| Err(SdtError::Validation(format!("plan at {}: {m}", self.intersection)));
        if self.phases.is_empty() {
            return bad("no phases".into());
        }
        if !(self.cycle_length.is_finite() && self.cycle_length > 0.0) || !self.offset.is_finite() {
            return bad("cycle length must be positive and offset finite".into());
        }
        let mut ids = std::collections::BTreeSet::new();
        for p in &self.phases {
            if !ids.insert(p.id) {
                return bad(format!("duplicate phase id {}", p.id));
            }
            if !(p.green > 0.0) || !(p.yellow >= 0.0) || !(p.red >= 0.0) || !p.duration().is_finite() {
                return bad(format!("phase {} needs green > 0 and nonnegative yellow and red", p.id));
            }
        }
        let total: f64 = self.phases.iter().map(Phase::duration).sum();
        if (total - self.cycle_length).abs() > EPS * self.cycle_length.max(1.0) {
            return bad(format!("phase durations sum to {total}, cycle is {}", self.cycle_length));
        }
        if let Some(f) = fabric {
            for p in &self.phases {
                for c in &p.connections {
                    if f.connection(*c).is_none() {
                        return Err(SdtError::PolicyMismatch(format!("phase {} grants unknown connection {c}", p.id)));
                    }
                }
                if !f.is_phase_compatible(&p.connections) {
                    return bad(format!("phase {} grants conflicting connections", p.id));
                }
            }
        }
        Ok(())
    }

    /// Seconds into the cycle at which phase `index` turns green.
    pub fn phase_start(&self, index: usize) -> f64 {
        self.phases[..index].iter().map(Phase::duration).sum()
    }

    /// Position of `t` in the cycle, in `[0, cycle_length)`.
    pub fn cycle_time(&self, t: f64) -> f64 {
        (t - self.offset).rem_euclid(self.cycle_length)
    }

    /// Active phase index and its color at time `t`.
    pub fn state_at(&self, t: f64) -> (usize, SignalColor) {
        let mut x = self.cycle_time(t);
        for (i, p) in self.phases.iter().enumerate() {
            if x < p.green {
                return (i, SignalColor::Green);
            }
            x -= p.green;
            if x < p.yellow {
                return (i, SignalColor::Yellow);
            }
            x -= p.yellow;
            if x < p.red {
                return (i, SignalColor::Red);
            }
            x -= p.red;
        }
        // rounding at the very end of the cycle
        (self.phases.len() - 1, SignalColor::Red)
    }

    /// Color shown to the movements of phase `index` at time `t`.
    pub fn phase_color(&self, index: usize, t: f64) -> SignalColor {
        match self.state_at(t) {
            (i, c) if i == index => c,
            _ => SignalColor::Red,
        }
    }

    /// Connections that may enter the box at time `t`.
    pub fn grants_at(&self, t: f64) -> &[ConnectionId] {
        match self.state_at(t) {
            (i, SignalColor::Green) => &self.phases[i].connections,
            _ => &[],
        }
    }

    /// Start of the next green of phase `index` at or after `t`, and the end
    /// of the green that is current or comes next.
    pub fn next_green(&self, index: usize, t: f64) -> (f64, f64) {
        let start_in_cycle = self.phase_start(index);
        let x = self.cycle_time(t);
        let base = t - x;
        let g = self.phases[index].green;
        if x >= start_in_cycle && x < start_in_cycle + g {
            (t, base + start_in_cycle + g)
        } else if x < start_in_cycle {
            (base + start_in_cycle, base + start_in_cycle + g)
        } else {
            let s = base + self.cycle_length + start_in_cycle;
            (s, s + g)
        }
    }
}

/// One entry per nonzero color interval of every phase, each repeating with
/// the cycle. Entry ids count up from 0.
pub fn compile_signal_plan(plan: &SignalPlan, version: u64) -> Result<Vec<FlowTableEntry>, SdtError> {
    plan.validate(None)?;
    let c = plan.cycle_length;
    let mut out = Vec::new();
    let mut at = plan.offset;
    for (index, p) in plan.phases.iter().enumerate() {
        for (color, len) in [(SignalColor::Green, p.green), (SignalColor::Yellow, p.yellow), (SignalColor::Red, p.red)] {
            if len > 0.0 {
                out.push(FlowTableEntry {
                    id: out.len() as u64,
                    matcher: FlowMatch {
                        road: RoadRef::Intersection(plan.intersection),
                        lane: None,
                        window: TimeWindow::periodic(at.rem_euclid(c), len, c),
                        vehicle: VehicleMatch::Any,
                    },
                    action: Action::SetSignal {
                        phase: p.id,
                        index: index as u32,
                        color,
                        connections: p.connections.clone(),
                    },
                    priority: 0,
                    version,
                });
            }
            at += len;
        }
    }
    Ok(out)
}

/// Rebuilds the plan a set of compiled signal entries came from.
pub fn decompile_signal_plan(entries: &[FlowTableEntry]) -> Result<SignalPlan, SdtError> {
    let bad = |m: &str| SdtError::Validation(format!("cannot rebuild plan: {m}"));
    let mut intersection = None;
    let mut cycle = None;
    let mut phases: BTreeMap<u32, (Phase, Option<f64>)> = BTreeMap::new();
    for e in entries {
        let Action::SetSignal {
            phase,
            index,
            color,
            connections,
        } = &e.action
        else {
            return Err(bad("entry is not a signal entry"));
        };
        let RoadRef::Intersection(node) = e.matcher.road else {
            return Err(bad("signal entry not bound to an intersection"));
        };
        if *intersection.get_or_insert(node) != node {
            return Err(bad("entries for several intersections"));
        }
        let period = e.matcher.window.period.ok_or_else(|| bad("signal entry without period"))?;
        if *cycle.get_or_insert(period) != period {
            return Err(bad("entries with different cycle lengths"));
        }
        let slot = phases.entry(*index).or_insert_with(|| {
            (
                Phase {
                    id: *phase,
                    connections: connections.clone(),
                    green: 0.0,
                    yellow: 0.0,
                    red: 0.0,
                },
                None,
            )
        });
        if slot.0.id != *phase || &slot.0.connections != connections {
            return Err(bad("phase slot carries inconsistent data"));
        }
        let len = e.matcher.window.length;
        match color {
            SignalColor::Green => {
                slot.0.green = len;
                slot.1 = Some(e.matcher.window.start);
            }
            SignalColor::Yellow => slot.0.yellow = len,
            SignalColor::Red => slot.0.red = len,
        }
    }
    let (Some(intersection), Some(cycle_length)) = (intersection, cycle) else {
        return Err(bad("no entries"));
    };
    if phases.keys().copied().ne(0..phases.len() as u32) {
        return Err(bad("phase positions are not contiguous"));
    }
    let offset = phases[&0].1.ok_or_else(|| bad("first phase has no green"))?;
    let plan = SignalPlan {
        intersection,
        cycle_length,
        phases: phases.into_values().map(|(p, _)| p).collect(),
        offset,
    };
    plan.validate(None)?;
    Ok(plan)
}
