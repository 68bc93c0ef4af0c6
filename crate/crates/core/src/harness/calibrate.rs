//! Searches for the smallest protocol constants that meet a target error.
//!
//! Each key is walked along a geometric ladder: downwards while the
//! candidate still passes, upwards from a failing start until it passes.
//! Keys are visited in turn and the sweep repeats until nothing moves, so a
//! calibrated file fed back in comes out unchanged. A candidate passes when,
//! on every grid cell, the 95% Wilson upper bound on the error rate is at
//! most the target, both on the uniform instance and on a far instance.
//! Every candidate is run on the same trial seeds.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{Cell, Grid, ProtocolId, SCHEMA_VERSION};
use super::runner::{run_trial, trial_success, TrialSetup};
use super::stats::wilson_interval;
use super::with_workers;
use crate::constants::Constants;
use crate::dist::{flying_pony, paninski, uniform, PaninskiParam, Pmf, SignPattern};
use crate::error::{Error, Result};
use crate::seed::{derive, rng_from_seed, trial_seed};
use crate::smp::Engine;

const FAR: u64 = 0x0066_6172;

fn default_ratio() -> f64 {
    2f64.sqrt()
}

fn default_max_steps() -> usize {
    12
}

fn default_sweeps() -> usize {
    3
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationConfig {
    pub schema_version: u32,
    pub protocol: ProtocolId,
    pub grid: Grid,
    /// Constants to tune, in the order they are visited.
    pub keys: Vec<String>,
    /// Largest acceptable error probability on each side.
    pub target_error: f64,
    /// Trials per cell, instance and candidate.
    pub trials: u64,
    pub master_seed: u64,
    /// Starting point; defaults when absent.
    #[serde(default)]
    pub start: Option<Constants>,
    /// Ladder step, greater than 1.
    #[serde(default = "default_ratio")]
    pub ratio: f64,
    /// Most ladder steps per key and sweep.
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
    #[serde(default = "default_sweeps")]
    pub max_sweeps: usize,
    #[serde(default)]
    pub engine: Engine,
    #[serde(default)]
    pub workers: Option<usize>,
}

/// Measured errors of one candidate on one cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellError {
    pub cell: usize,
    pub k: usize,
    pub ell: u32,
    pub eps: f64,
    pub trials: u64,
    pub null_errors: u64,
    pub far_errors: u64,
    pub null_upper: f64,
    pub far_upper: f64,
}

impl CellError {
    pub fn worst_upper(&self) -> f64 {
        self.null_upper.max(self.far_upper)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateResult {
    pub constants: Constants,
    pub passed: bool,
    pub worst_upper: f64,
    pub cells: Vec<CellError>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub master_seed: u64,
    /// RFC 3339 timestamp.
    pub created: String,
    pub protocol: ProtocolId,
    pub grid: Grid,
    pub keys: Vec<String>,
    pub target_error: f64,
    pub trials: u64,
    pub engine: Engine,
}

/// The file written by a calibration run; [`Constants::load`] reads it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub constants: Constants,
    pub provenance: Provenance,
    /// Errors of the final constants.
    pub measured: Vec<CellError>,
    /// Candidates evaluated, in order.
    pub candidates: usize,
}

impl CalibrationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }
}

impl CalibrationConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: CalibrationConfig = serde_path_to_error::deserialize(de)
            .map_err(|e| Error::config(e.path().to_string(), e.into_inner().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::config("schema_version", format!("expected {SCHEMA_VERSION}")));
        }
        if self.trials < 100 {
            return Err(Error::config("trials", "calibration needs at least 100 trials per candidate"));
        }
        if !(self.ratio > 1.0 && self.ratio.is_finite()) {
            return Err(Error::config("ratio", "must exceed 1"));
        }
        if !(0.0..1.0).contains(&self.target_error) {
            return Err(Error::config("target_error", "must lie in [0, 1)"));
        }
        if self.keys.is_empty() {
            return Err(Error::config("keys", "must not be empty"));
        }
        for key in &self.keys {
            if !Constants::KEYS.contains(&key.as_str()) {
                return Err(Error::config("keys", format!("unknown constant `{key}`")));
            }
        }
        if self.grid.k.is_empty() || self.grid.ell.is_empty() || self.grid.eps.is_empty() {
            return Err(Error::config("grid", "must not be empty"));
        }
        if matches!(
            self.protocol,
            ProtocolId::Simulate | ProtocolId::Identity | ProtocolId::Dummy
        ) {
            return Err(Error::config(
                "protocol",
                format!("`{}` has no constants to calibrate here", self.protocol.name()),
            ));
        }
        Ok(())
    }

    fn cells(&self) -> Vec<Cell> {
        super::config::ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            protocol: self.protocol,
            instance: super::config::InstanceSpec::Uniform,
            grid: self.grid.clone(),
            trials: 1,
            master_seed: self.master_seed,
            engine: self.engine,
            expect: Default::default(),
            constants_file: None,
            constants: None,
            reference: None,
            inner: None,
            output: None,
            workers: None,
        }
        .cells()
    }
}

/// The far instance used against `protocol` on a cell.
pub fn far_instance(protocol: ProtocolId, k: usize, eps: f64, seed: u64) -> Result<Pmf> {
    let mut rng = rng_from_seed(derive(seed, &[FAR]));
    match protocol {
        ProtocolId::FlyingPony => flying_pony(k, &SignPattern::Random.signs(k / 2, &mut rng)),
        _ => paninski(&PaninskiParam::random(k, eps, &mut rng)?),
    }
}

/// Errors of one candidate on every cell.
pub fn evaluate(cfg: &CalibrationConfig, constants: &Constants) -> Result<CandidateResult> {
    let cells = cfg.cells();
    let jobs: Vec<(usize, bool, u64)> = (0..cells.len())
        .flat_map(|c| [true, false].into_iter().flat_map(move |null| (0..cfg.trials).map(move |t| (c, null, t))))
        .collect();
    let outcomes: Vec<Result<bool>> = with_workers(cfg.workers, || {
        jobs.par_iter()
            .map(|&(ci, null, trial)| {
                let cell = &cells[ci];
                let seed = trial_seed(cfg.master_seed, 2 * cell.index as u64 + null as u64, trial);
                let p = if null {
                    uniform(cell.k)?
                } else {
                    far_instance(cfg.protocol, cell.k, cell.eps, seed)?
                };
                let setup = TrialSetup {
                    protocol: cfg.protocol,
                    k: cell.k,
                    ell: cell.ell,
                    eps: cell.eps,
                    n: cell.n,
                    constants,
                    engine: cfg.engine,
                    reference: None,
                    inner: ProtocolId::Smooth,
                };
                match run_trial(&setup, &p, seed, null) {
                    Ok(r) => Ok(trial_success(cfg.protocol, &r, cell.eps, null)),
                    // A fixed player budget too small for the candidate is a failed trial.
                    Err(Error::Undersized { .. }) => Ok(false),
                    Err(e) => Err(e),
                }
            })
            .collect()
    })?;
    let mut errors = vec![[0u64; 2]; cells.len()];
    for (&(ci, null, _), ok) in jobs.iter().zip(outcomes) {
        if !ok? {
            errors[ci][null as usize] += 1;
        }
    }
    let upper = |e: u64| 1.0 - wilson_interval(cfg.trials - e, cfg.trials).0;
    let cells: Vec<CellError> = cells
        .iter()
        .map(|c| {
            let [far_errors, null_errors] = errors[c.index];
            CellError {
                cell: c.index,
                k: c.k,
                ell: c.ell,
                eps: c.eps,
                trials: cfg.trials,
                null_errors,
                far_errors,
                null_upper: upper(null_errors),
                far_upper: upper(far_errors),
            }
        })
        .collect();
    let worst_upper = cells.iter().map(CellError::worst_upper).fold(0.0, f64::max);
    Ok(CandidateResult {
        constants: constants.clone(),
        passed: worst_upper <= cfg.target_error,
        worst_upper,
        cells,
    })
}

fn step(key: &str, v: f64, ratio: f64, down: bool) -> Option<f64> {
    let next = if down { v / ratio } else { v * ratio };
    if key == "smooth_batches" {
        let r = next.round();
        let r = if down { r.min(v - 1.0) } else { r.max(v + 1.0) };
        (r >= 1.0).then_some(r)
    } else {
        Some(next)
    }
}

/// Runs the ladder search and returns the calibrated constants.
pub fn calibrate(cfg: &CalibrationConfig) -> Result<CalibrationReport> {
    cfg.validate()?;
    let best_error = 1.0 - wilson_interval(cfg.trials, cfg.trials).0;
    let mut current = cfg.start.clone().unwrap_or_default();
    current.validate()?;
    let mut result = evaluate(cfg, &current)?;
    let mut candidates = 1;
    if best_error > cfg.target_error {
        return Err(failure(cfg, &result, "the target is below what the trial budget can certify"));
    }
    for _ in 0..cfg.max_sweeps {
        let mut moved = false;
        for key in &cfg.keys {
            let down = result.passed;
            let mut steps = 0;
            loop {
                if steps == cfg.max_steps {
                    break;
                }
                let Some(v) = step(key, current.get(key)?, cfg.ratio, down) else {
                    break;
                };
                let mut candidate = current.clone();
                candidate.set(key, v)?;
                let r = evaluate(cfg, &candidate)?;
                candidates += 1;
                steps += 1;
                if down && !r.passed {
                    break;
                }
                current = candidate;
                result = r;
                moved = true;
                if !down && result.passed {
                    break;
                }
            }
        }
        if !moved {
            break;
        }
    }
    if !result.passed {
        return Err(failure(cfg, &result, "no candidate on the ladder met the target"));
    }
    Ok(CalibrationReport {
        constants: current,
        provenance: Provenance {
            master_seed: cfg.master_seed,
            created: humantime::format_rfc3339_seconds(std::time::SystemTime::now()).to_string(),
            protocol: cfg.protocol,
            grid: cfg.grid.clone(),
            keys: cfg.keys.clone(),
            target_error: cfg.target_error,
            trials: cfg.trials,
            engine: cfg.engine,
        },
        measured: result.cells,
        candidates,
    })
}

/// Calibrated constants from several runs applied in sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPlanReport {
    pub constants: Constants,
    pub stages: Vec<CalibrationReport>,
}

impl CalibrationPlanReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }
}

/// Runs the stages in order. Each stage after the first starts from the
/// constants the previous one produced.
pub fn calibrate_plan(stages: &[CalibrationConfig]) -> Result<CalibrationPlanReport> {
    if stages.is_empty() {
        return Err(Error::config("stages", "must not be empty"));
    }
    let mut reports: Vec<CalibrationReport> = Vec::with_capacity(stages.len());
    for stage in stages {
        let start = match reports.last() {
            Some(prev) => Some(prev.constants.clone()),
            None => stage.start.clone(),
        };
        reports.push(calibrate(&CalibrationConfig {
            start,
            ..stage.clone()
        })?);
    }
    Ok(CalibrationPlanReport {
        constants: reports.last().expect("at least one stage").constants.clone(),
        stages: reports,
    })
}

/// Parses either one calibration config or an array of them.
pub fn parse_calibration_stages(text: &str) -> Result<Vec<CalibrationConfig>> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| Error::config("<root>", e.to_string()))?;
    match value {
        serde_json::Value::Array(items) => items
            .iter()
            .enumerate()
            .map(|(i, v)| {
                CalibrationConfig::from_json(&v.to_string()).map_err(|e| match e {
                    Error::Config { key, message } => Error::config(format!("[{i}].{key}"), message),
                    other => other,
                })
            })
            .collect(),
        _ => Ok(vec![CalibrationConfig::from_json(text)?]),
    }
}

fn failure(cfg: &CalibrationConfig, best: &CandidateResult, why: &str) -> Error {
    let values: Vec<String> = cfg
        .keys
        .iter()
        .map(|k| format!("{k} = {}", best.constants.get(k).unwrap_or(f64::NAN)))
        .collect();
    Error::Calibration(format!(
        "{why}; best found: {} with worst error bound {:.4} against target {}",
        values.join(", "),
        best.worst_upper,
        cfg.target_error
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::PlayerSpec;

    fn l2_config(target: f64) -> CalibrationConfig {
        CalibrationConfig {
            schema_version: SCHEMA_VERSION,
            protocol: ProtocolId::Centralized,
            grid: Grid {
                k: vec![4, 16],
                ell: vec![4],
                eps: vec![0.4],
                n: PlayerSpec::Auto,
            },
            keys: vec!["c_l2".into()],
            target_error: target,
            trials: 150,
            master_seed: 5,
            start: None,
            ratio: 2f64.sqrt(),
            max_steps: 12,
            max_sweeps: 3,
            engine: Engine::Counts,
            workers: None,
        }
    }

    #[test]
    fn l2_constant_calibrates_and_is_idempotent() {
        let cfg = l2_config(1.0 / 3.0);
        let report = calibrate(&cfg).unwrap();
        assert!(report.constants.c_l2 < Constants::default().c_l2);
        assert!(report.measured.iter().all(|c| c.worst_upper() <= 1.0 / 3.0));
        let again = calibrate(&CalibrationConfig {
            start: Some(report.constants.clone()),
            ..cfg
        })
        .unwrap();
        assert_eq!(again.constants, report.constants);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, report.to_json()).unwrap();
        assert_eq!(Constants::load(&path).unwrap(), report.constants);
    }

    #[test]
    fn impossible_target_fails() {
        assert!(matches!(calibrate(&l2_config(0.0)), Err(Error::Calibration(_))));
    }

    #[test]
    fn config_checks() {
        let mut cfg = l2_config(0.3);
        cfg.trials = 50;
        assert!(matches!(cfg.validate(), Err(Error::Config { .. })));
        let mut cfg = l2_config(0.3);
        cfg.keys = vec!["nope".into()];
        assert!(cfg.validate().is_err());
        let text = serde_json::to_string(&l2_config(0.3)).unwrap().replace("\"trials\"", "\"trails\"");
        match CalibrationConfig::from_json(&text) {
            Err(Error::Config { key, .. }) => assert!(key.contains("trails") || key == "."),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn integer_ladder_moves() {
        assert_eq!(step("smooth_batches", 12.0, 1.1, true), Some(11.0));
        assert_eq!(step("smooth_batches", 1.0, 2.0, true), None);
        assert_eq!(step("smooth_batches", 3.0, 1.1, false), Some(4.0));
    }
}
