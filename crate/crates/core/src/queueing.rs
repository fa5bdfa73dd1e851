//! Single-server queue delay estimates for intersection approaches.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum QueueError {
    #[error("unstable queue: arrival rate {arrival} >= service rate {service}")]
    UnstableQueue { arrival: f64, service: f64 },
    #[error("rates must be finite with arrival >= 0 and service > 0")]
    BadRate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ServiceModel {
    /// Exponential service times.
    Mm1,
    /// Deterministic service time 1/μ.
    Md1,
}

impl std::str::FromStr for ServiceModel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "mm1" | "m/m/1" => Ok(Self::Mm1),
            "md1" | "m/d/1" => Ok(Self::Md1),
            other => Err(format!("unknown queue model '{other}' (expected mm1 or md1)")),
        }
    }
}

fn check(lambda: f64, mu: f64) -> Result<(), QueueError> {
    if !lambda.is_finite() || !mu.is_finite() || lambda < 0.0 || mu <= 0.0 {
        return Err(QueueError::BadRate);
    }
    if lambda >= mu {
        return Err(QueueError::UnstableQueue { arrival: lambda, service: mu });
    }
    Ok(())
}

/// Mean waiting time in queue, W_q = λ / (μ(μ − λ)).
pub fn expected_wait_mm1(lambda: f64, mu: f64) -> Result<f64, QueueError> {
    check(lambda, mu)?;
    Ok(lambda / (mu * (mu - lambda)))
}

/// Mean waiting time in queue, W_q = ρ / (2μ(1 − ρ)).
pub fn expected_wait_md1(lambda: f64, mu: f64) -> Result<f64, QueueError> {
    check(lambda, mu)?;
    let rho = lambda / mu;
    Ok(rho / (2.0 * mu * (1.0 - rho)))
}

pub fn expected_wait(model: ServiceModel, lambda: f64, mu: f64) -> Result<f64, QueueError> {
    match model {
        ServiceModel::Mm1 => expected_wait_mm1(lambda, mu),
        ServiceModel::Md1 => expected_wait_md1(lambda, mu),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum EventKind {
    // departures sort before arrivals at equal times
    Departure,
    Arrival,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Event {
    time: f64,
    kind: EventKind,
}

impl Eq for Event {}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        let rank = |k: EventKind| match k {
            EventKind::Departure => 0,
            EventKind::Arrival => 1,
        };
        // reversed for a min-heap
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| rank(other.kind).cmp(&rank(self.kind)))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulatedWait {
    pub mean_wait: f64,
    pub served: u64,
}

/// Event-driven FIFO single-server simulation. Returns the mean time spent
/// waiting before service over the first `arrivals` customers.
pub fn simulate_wait(model: ServiceModel, lambda: f64, mu: f64, arrivals: u64, seed: u64) -> Result<SimulatedWait, QueueError> {
    check(lambda, mu)?;
    if lambda == 0.0 || arrivals == 0 {
        return Ok(SimulatedWait { mean_wait: 0.0, served: 0 });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inter = Exp::new(lambda).map_err(|_| QueueError::BadRate)?;
    let service_exp = Exp::new(mu).map_err(|_| QueueError::BadRate)?;
    let draw_service = |rng: &mut ChaCha8Rng| match model {
        ServiceModel::Mm1 => service_exp.sample(rng),
        ServiceModel::Md1 => 1.0 / mu,
    };

    let mut events = BinaryHeap::new();
    let mut waiting: VecDeque<f64> = VecDeque::new();
    let mut busy = false;
    let mut generated = 1u64;
    let mut served = 0u64;
    let mut total_wait = 0.0;
    events.push(Event {
        time: inter.sample(&mut rng),
        kind: EventKind::Arrival,
    });
    while let Some(ev) = events.pop() {
        match ev.kind {
            EventKind::Arrival => {
                if generated < arrivals {
                    generated += 1;
                    events.push(Event {
                        time: ev.time + inter.sample(&mut rng),
                        kind: EventKind::Arrival,
                    });
                }
                if busy {
                    waiting.push_back(ev.time);
                } else {
                    busy = true;
                    served += 1;
                    events.push(Event {
                        time: ev.time + draw_service(&mut rng),
                        kind: EventKind::Departure,
                    });
                }
            }
            EventKind::Departure => match waiting.pop_front() {
                Some(arrived) => {
                    total_wait += ev.time - arrived;
                    served += 1;
                    events.push(Event {
                        time: ev.time + draw_service(&mut rng),
                        kind: EventKind::Departure,
                    });
                }
                None => busy = false,
            },
        }
    }
    Ok(SimulatedWait {
        mean_wait: total_wait / served as f64,
        served,
    })
}
