use serde::{Deserialize, Serialize};

use super::SimError;
use crate::sdt::{CooperativeParams, MatchingPolicy};

/// Cellular-automaton and run parameters. Speeds are in cells per tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// meters
    pub cell_length: f64,
    /// seconds
    pub tick: f64,
    pub v_max_human: u8,
    pub v_max_av: u8,
    /// Random slowdown probability of human drivers.
    pub p_slow: f64,
    pub seed: u64,
    /// Measured ticks, after warm-up.
    pub duration: u64,
    pub warmup: u64,
    pub measure_interval: u64,
    pub vehicles: usize,
    /// Share of human-driven vehicles that are connected.
    pub connected_fraction: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            cell_length: 7.5,
            tick: 1.0,
            v_max_human: 2,
            v_max_av: 2,
            p_slow: 0.2,
            seed: 1,
            duration: 3600,
            warmup: 600,
            measure_interval: 600,
            vehicles: 300,
            connected_fraction: 0.2,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::Config(m.into()));
        if !(self.cell_length > 0.0 && self.cell_length.is_finite()) {
            return bad("cell_length must be positive");
        }
        // signal plans and flow-table windows are in seconds, one per tick
        if self.tick != 1.0 {
            return bad("tick must be 1 s");
        }
        if !(0.0..=1.0).contains(&self.p_slow) {
            return bad("p_slow must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.connected_fraction) {
            return bad("connected_fraction must lie in [0, 1]");
        }
        if self.v_max_human == 0 || self.v_max_av == 0 {
            return bad("v_max must be at least 1");
        }
        if self.measure_interval == 0 || self.duration % self.measure_interval != 0 {
            return bad("duration must be a positive multiple of measure_interval");
        }
        Ok(())
    }

    /// km/h of a speed given in cells per tick.
    pub fn kmh(&self, cells_per_tick: f64) -> f64 {
        cells_per_tick * self.cell_length / self.tick * 3.6
    }

    /// Cells per tick for an advisory in km/h, never below 1.
    pub fn advisory_cells(&self, kmh: f64) -> u8 {
        let cells = (kmh / 3.6 * self.tick / self.cell_length).floor();
        cells.clamp(1.0, u8::MAX as f64) as u8
    }
}

/// Which controller features the controlled mode switches on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlConfig {
    pub cooperative: bool,
    pub advisories: bool,
    pub dynamic_routing: bool,
    pub density_threshold: f64,
    pub max_extension: f64,
    pub lookahead: f64,
    /// Matching algorithm of unsignalized intersections.
    pub matching: MatchingPolicy,
}

impl Default for ControlConfig {
    fn default() -> Self {
        let c = CooperativeParams::default();
        Self {
            cooperative: true,
            advisories: true,
            dynamic_routing: true,
            density_threshold: c.density_threshold,
            max_extension: c.max_extension,
            lookahead: c.lookahead,
            matching: MatchingPolicy::default(),
        }
    }
}

impl ControlConfig {
    pub fn cooperative_params(&self) -> CooperativeParams {
        CooperativeParams {
            density_threshold: self.density_threshold,
            max_extension: self.max_extension,
            lookahead: self.lookahead,
        }
    }
}

/// Parameters of an AV-share sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub fractions: Vec<f64>,
    pub replications: u32,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            fractions: vec![0.0, 0.2, 0.6],
            replications: 10,
        }
    }
}
