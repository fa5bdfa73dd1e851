use serde::{Deserialize, Serialize};

use rayon::prelude::*;

use super::{Audit, Measurement, Mode, SimError, Simulation};
use crate::scenario::Scenario;

/// One measurement interval of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub fraction: f64,
    pub mode: Mode,
    pub seed: u64,
    pub interval: u64,
    pub mean_speed_kmh: Option<f64>,
}

/// Whole-run result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub fraction: f64,
    pub mode: Mode,
    pub seed: u64,
    /// Mean of the defined interval means.
    pub mean_speed_kmh: Option<f64>,
    pub measurements: Vec<Measurement>,
    pub audit: Audit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub fraction: f64,
    pub replications: u32,
    pub baseline_kmh: f64,
    pub baseline_std: f64,
    pub controlled_kmh: f64,
    pub controlled_std: f64,
    /// (controlled − baseline) / baseline × 100 over the mean speeds.
    pub improvement_pct: f64,
    /// Sample std of the per-seed paired improvements.
    pub improvement_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub runs: Vec<RunSummary>,
    pub summary: Vec<SummaryRow>,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

fn run_one(scenario: &Scenario, fraction: f64, mode: Mode, seed: u64) -> Result<RunSummary, SimError> {
    let mut config = scenario.sim.clone();
    config.seed = seed;
    let mut sim = Simulation::with_config(scenario, config, mode, fraction)?;
    let measurements = sim.run()?.to_vec();
    let defined: Vec<f64> = measurements.iter().filter_map(|m| m.mean_speed_kmh).collect();
    Ok(RunSummary {
        fraction,
        mode,
        seed,
        mean_speed_kmh: (!defined.is_empty()).then(|| mean(&defined)),
        measurements,
        audit: sim.audit(),
    })
}

/// Runs every fraction in both modes over `replications` seeds starting at
/// the scenario's seed. Both modes of a replication share the seed, so the
/// comparison is paired. Runs execute on a pool of `threads` workers; the
/// result does not depend on the thread count.
pub fn run_experiment(
    scenario: &Scenario,
    fractions: &[f64],
    replications: u32,
    threads: usize,
) -> Result<ExperimentResult, SimError> {
    if let Some(f) = fractions.iter().find(|f| !(0.0..=1.0).contains(*f)) {
        return Err(SimError::Config(format!("AV fraction {f} outside [0, 1]")));
    }
    if replications == 0 {
        return Err(SimError::Config("replications must be at least 1".into()));
    }
    let base = scenario.sim.seed;
    let jobs: Vec<(usize, Mode, u64)> = (0..fractions.len())
        .flat_map(|i| {
            [Mode::Baseline, Mode::Controlled]
                .into_iter()
                .flat_map(move |m| (0..u64::from(replications)).map(move |r| (i, m, base + r)))
        })
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| SimError::Config(e.to_string()))?;
    let runs: Vec<RunSummary> = pool.install(|| {
        jobs.par_iter()
            .map(|&(i, mode, seed)| run_one(scenario, fractions[i], mode, seed))
            .collect::<Result<_, _>>()
    })?;

    let mut summary = Vec::new();
    for &f in fractions {
        let speeds = |mode: Mode| -> Vec<Option<f64>> {
            runs.iter()
                .filter(|r| r.fraction == f && r.mode == mode)
                .map(|r| r.mean_speed_kmh)
                .collect()
        };
        let (b, c) = (speeds(Mode::Baseline), speeds(Mode::Controlled));
        let bs: Vec<f64> = b.iter().flatten().copied().collect();
        let cs: Vec<f64> = c.iter().flatten().copied().collect();
        if bs.is_empty() || cs.is_empty() {
            return Err(SimError::Config(format!("no vehicle observed at AV fraction {f}")));
        }
        let paired: Vec<f64> = b
            .iter()
            .zip(&c)
            .filter_map(|(b, c)| Some((c.as_ref()? - b.as_ref()?) / b.as_ref()? * 100.0))
            .collect();
        let (bm, cm) = (mean(&bs), mean(&cs));
        summary.push(SummaryRow {
            fraction: f,
            replications,
            baseline_kmh: bm,
            baseline_std: sample_std(&bs),
            controlled_kmh: cm,
            controlled_std: sample_std(&cs),
            improvement_pct: (cm - bm) / bm * 100.0,
            improvement_std: sample_std(&paired),
        });
    }
    Ok(ExperimentResult { runs, summary })
}

impl ExperimentResult {
    /// Per-interval records sorted by fraction, mode, seed, interval.
    pub fn records(&self) -> Vec<RunRecord> {
        let mut out: Vec<RunRecord> = self
            .runs
            .iter()
            .flat_map(|r| {
                r.measurements.iter().map(move |m| RunRecord {
                    fraction: r.fraction,
                    mode: r.mode,
                    seed: r.seed,
                    interval: m.interval,
                    mean_speed_kmh: m.mean_speed_kmh,
                })
            })
            .collect();
        out.sort_by(|a, b| {
            a.fraction
                .total_cmp(&b.fraction)
                .then(a.mode.cmp(&b.mode))
                .then(a.seed.cmp(&b.seed))
                .then(a.interval.cmp(&b.interval))
        });
        out
    }

    /// Columns `fraction,mode,seed,interval,mean_speed_kmh`; undefined
    /// intervals leave the speed empty.
    pub fn runs_csv(&self) -> Result<String, SimError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in self.records() {
            w.serialize(r).map_err(|e| SimError::Config(e.to_string()))?;
        }
        finish(w)
    }

    pub fn summary_csv(&self) -> Result<String, SimError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.summary {
            w.serialize(r).map_err(|e| SimError::Config(e.to_string()))?;
        }
        finish(w)
    }
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String, SimError> {
    let bytes = w.into_inner().map_err(|e| SimError::Config(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| SimError::Config(e.to_string()))
}
