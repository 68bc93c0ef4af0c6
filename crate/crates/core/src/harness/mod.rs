//! Seeded experiment sweeps, calibration of the protocol constants, and
//! minimal-player scaling searches.
//!
//! A sweep is described by an [`ExperimentConfig`]. Every trial draws all of
//! its randomness from `trial_seed(master_seed, cell, trial)`, so a single
//! trial can be re-run in isolation and the whole result set is a function
//! of the configuration. Trials fan out over a worker pool; reports carry
//! their coordinates and are sorted before anything is written.

mod calibrate;
mod config;
mod output;
mod runner;
mod scaling;
mod stats;

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist::{tv, uniform, Pmf};
use crate::error::Result;
use crate::seed::{derive, rng_from_seed, trial_seed};

pub use calibrate::{
    calibrate, calibrate_plan, evaluate, far_instance, parse_calibration_stages, CalibrationConfig, CalibrationPlanReport,
    CalibrationReport, CandidateResult, CellError, Provenance,
};
pub use config::{Cell, ExperimentConfig, Expect, Grid, InstanceSpec, PlayerSpec, ProtocolId, RateForm, SCHEMA_VERSION};
pub use output::{
    load_summary_csv, load_summary_json, load_timings, load_trials_csv, load_trials_jsonl, write_results, Format,
    WrittenFiles,
};
pub use runner::{auto_players, run_trial, trial_success, TrialResult, TrialSetup, DUMMY_THRESHOLD};
pub use scaling::{min_players_search, scaling_report, ScalingConfig, ScalingPoint, ScalingReport, SearchOutcome};
pub use stats::{log_log_slope, mean_stderr, wilson_interval};

const INSTANCE: u64 = 0x696e_7374_616e;
const REFERENCE: u64 = 0x7265_6665_7265_6e63;

/// One trial of one cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub cell: usize,
    pub k: usize,
    pub ell: u32,
    pub eps: f64,
    /// Players made available to the protocol.
    pub n: u64,
    pub trial: u64,
    pub seed: u64,
    pub decision: String,
    pub success: bool,
    pub players: u64,
    pub public_bits: u64,
    pub symbol: Option<usize>,
    pub tv: Option<f64>,
}

/// Wall-clock time of one trial. Kept apart from the reports so that the
/// data files are reproducible byte for byte.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialTiming {
    pub cell: usize,
    pub trial: u64,
    pub wall_us: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub cell: usize,
    pub k: usize,
    pub ell: u32,
    pub eps: f64,
    pub n: u64,
    pub trials: u64,
    pub successes: u64,
    pub success_rate: f64,
    pub wilson_lo: f64,
    pub wilson_hi: f64,
    pub aborts: u64,
    pub mean_players: f64,
    pub se_players: f64,
    pub mean_public_bits: f64,
    /// For simulation cells with a fixed instance: TV between the empirical
    /// law of the declared symbols and the instance.
    pub tv_to_instance: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResultSet {
    pub reports: Vec<TrialReport>,
    pub summaries: Vec<CellSummary>,
    pub timings: Vec<TrialTiming>,
}

impl ResultSet {
    pub fn summary(&self, cell: usize) -> Option<&CellSummary> {
        self.summaries.iter().find(|s| s.cell == cell)
    }

    pub fn all_cells_at_least(&self, rate: f64) -> bool {
        self.summaries.iter().all(|s| s.success_rate >= rate)
    }
}

/// The instance for one trial: per trial when it is resampled, else per cell.
pub fn instance_for(spec: &InstanceSpec, cell: &Cell, master: u64, seed: u64) -> Result<Pmf> {
    let stream = if spec.varies_by_trial() {
        derive(seed, &[INSTANCE])
    } else {
        derive(master, &[INSTANCE, cell.index as u64])
    };
    spec.build(cell.k, cell.eps, &mut rng_from_seed(stream))
}

fn reference_for(cfg: &ExperimentConfig, cell: &Cell) -> Result<Option<Pmf>> {
    match &cfg.reference {
        Some(spec) => {
            let stream = derive(cfg.master_seed, &[REFERENCE, cell.index as u64]);
            spec.build(cell.k, cell.eps, &mut rng_from_seed(stream)).map(Some)
        }
        None => Ok(None),
    }
}

fn expects_accept(expect: Expect, p: &Pmf, reference: Option<&Pmf>) -> Result<bool> {
    Ok(match expect {
        Expect::Accept => true,
        Expect::Reject => false,
        Expect::Auto => match reference {
            Some(q) => tv(p, q)? < 1e-12,
            None => tv(p, &uniform(p.k())?)? < 1e-12,
        },
    })
}

/// Runs `op` on a pool of `workers` threads, or on the global pool.
pub(crate) fn with_workers<T: Send>(workers: Option<usize>, op: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        Some(w) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(w)
                .build()
                .map_err(|e| crate::Error::config("workers", e.to_string()))?;
            Ok(pool.install(op))
        }
        None => Ok(op()),
    }
}

/// Runs every trial of every cell and aggregates per cell.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ResultSet> {
    cfg.validate()?;
    let constants = cfg.resolve_constants()?;
    let inner = cfg.inner.unwrap_or(ProtocolId::Smooth);
    let cells = cfg.cells();
    let references = cells
        .iter()
        .map(|c| reference_for(cfg, c))
        .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, u64)> = (0..cells.len())
        .flat_map(|c| (0..cfg.trials).map(move |t| (c, t)))
        .collect();

    let run_one = |&(ci, trial): &(usize, u64)| -> Result<(TrialReport, TrialTiming, Option<Pmf>)> {
        let cell = &cells[ci];
        let seed = trial_seed(cfg.master_seed, cell.index as u64, trial);
        let start = Instant::now();
        let p = instance_for(&cfg.instance, cell, cfg.master_seed, seed)?;
        let reference = references[ci].as_ref();
        let expect = expects_accept(cfg.expect, &p, reference)?;
        let setup = TrialSetup {
            protocol: cfg.protocol,
            k: cell.k,
            ell: cell.ell,
            eps: cell.eps,
            n: cell.n,
            constants: &constants,
            engine: cfg.engine,
            reference,
            inner,
        };
        let result = run_trial(&setup, &p, seed, expect)?;
        let report = TrialReport {
            cell: cell.index,
            k: cell.k,
            ell: cell.ell,
            eps: cell.eps,
            n: result.n,
            trial,
            seed,
            decision: result.verdict.label(),
            success: trial_success(cfg.protocol, &result, cell.eps, expect),
            players: result.players,
            public_bits: result.public_bits,
            symbol: result.symbol(),
            tv: result.tv,
        };
        let timing = TrialTiming {
            cell: cell.index,
            trial,
            wall_us: start.elapsed().as_micros() as u64,
        };
        // The instance is only needed to summarize fixed-instance simulation cells.
        let keep = (cfg.protocol == ProtocolId::Simulate && trial == 0 && !cfg.instance.varies_by_trial()).then_some(p);
        Ok((report, timing, keep))
    };
    let outcomes: Vec<Result<_>> = with_workers(cfg.workers, || jobs.par_iter().map(run_one).collect())?;

    let mut reports = Vec::with_capacity(outcomes.len());
    let mut timings = Vec::with_capacity(outcomes.len());
    let mut instances: Vec<Option<Pmf>> = vec![None; cells.len()];
    for outcome in outcomes {
        let (report, timing, p) = outcome?;
        if let Some(p) = p {
            instances[report.cell] = Some(p);
        }
        reports.push(report);
        timings.push(timing);
    }
    reports.sort_by_key(|r| (r.cell, r.trial));
    timings.sort_by_key(|t| (t.cell, t.trial));
    let summaries = cells
        .iter()
        .map(|cell| {
            let rows: Vec<&TrialReport> = reports.iter().filter(|r| r.cell == cell.index).collect();
            summarize(cell, &rows, instances[cell.index].as_ref())
        })
        .collect::<Result<_>>()?;
    Ok(ResultSet {
        reports,
        summaries,
        timings,
    })
}

/// Aggregates the reports of one cell.
pub fn summarize(cell: &Cell, rows: &[&TrialReport], instance: Option<&Pmf>) -> Result<CellSummary> {
    let trials = rows.len() as u64;
    let successes = rows.iter().filter(|r| r.success).count() as u64;
    let (wilson_lo, wilson_hi) = wilson_interval(successes, trials);
    let players: Vec<f64> = rows.iter().map(|r| r.players as f64).collect();
    let (mean_players, se_players) = mean_stderr(&players);
    let mean_public_bits = if rows.is_empty() {
        0.0
    } else {
        rows.iter().map(|r| r.public_bits as f64).sum::<f64>() / trials as f64
    };
    let tv_to_instance = match instance {
        Some(p) => {
            let mut counts = vec![0u64; p.k()];
            for x in rows.iter().filter_map(|r| r.symbol) {
                counts[x] += 1;
            }
            let total: u64 = counts.iter().sum();
            if total == 0 {
                None
            } else {
                Some(0.5 * counts
                    .iter()
                    .zip(p.probs())
                    .map(|(&c, &q)| (c as f64 / total as f64 - q).abs())
                    .sum::<f64>())
            }
        }
        None => None,
    };
    Ok(CellSummary {
        cell: cell.index,
        k: cell.k,
        ell: cell.ell,
        eps: cell.eps,
        n: rows.first().map_or(0, |r| r.n),
        trials,
        successes,
        success_rate: if trials == 0 { 0.0 } else { successes as f64 / trials as f64 },
        wilson_lo,
        wilson_hi,
        aborts: rows.iter().filter(|r| r.decision.starts_with("abort")).count() as u64,
        mean_players,
        se_players,
        mean_public_bits,
        tv_to_instance,
    })
}
