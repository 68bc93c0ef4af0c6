//! Minimal player counts as a function of `k`, and their log-log slope.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::calibrate::far_instance;
use super::config::{ProtocolId, SCHEMA_VERSION};
use super::runner::{run_trial, trial_success, TrialSetup};
use super::stats::log_log_slope;
use super::with_workers;
use crate::constants::Constants;
use crate::dist::uniform;
use crate::error::{Error, Result};
use crate::seed::{derive, trial_seed};
use crate::smp::Engine;

fn default_trials() -> u64 {
    300
}

fn default_precision() -> f64 {
    1.05
}

fn default_start() -> u64 {
    16
}

fn default_target() -> f64 {
    2.0 / 3.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingConfig {
    pub schema_version: u32,
    pub protocols: Vec<ProtocolId>,
    pub k: Vec<usize>,
    pub ell: u32,
    pub eps: f64,
    #[serde(default = "default_trials")]
    pub trials: u64,
    pub master_seed: u64,
    #[serde(default)]
    pub engine: Engine,
    #[serde(default)]
    pub constants_file: Option<std::path::PathBuf>,
    #[serde(default)]
    pub constants: Option<Constants>,
    /// First player count tried.
    #[serde(default = "default_start")]
    pub n_start: u64,
    /// Largest player count tried; points that need more are censored.
    pub n_cap: u64,
    /// The search stops once the bracketing counts are within this ratio.
    #[serde(default = "default_precision")]
    pub precision: f64,
    /// Success rate required on both the uniform and the far instance.
    #[serde(default = "default_target")]
    pub target: f64,
    #[serde(default)]
    pub workers: Option<usize>,
}

impl ScalingConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: ScalingConfig = serde_path_to_error::deserialize(de)
            .map_err(|e| Error::config(e.path().to_string(), e.into_inner().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::config("schema_version", format!("expected {SCHEMA_VERSION}")));
        }
        if self.protocols.is_empty() {
            return Err(Error::config("protocols", "must not be empty"));
        }
        if let Some(p) = self
            .protocols
            .iter()
            .find(|p| matches!(p, ProtocolId::Simulate | ProtocolId::Identity))
        {
            return Err(Error::config("protocols", format!("`{}` cannot be scaled", p.name())));
        }
        if self.k.len() < 3 {
            return Err(Error::config("k", "at least three values are needed"));
        }
        if self.k.iter().any(|&k| k < 2) {
            return Err(Error::config("k", "every k must be at least 2"));
        }
        if self.trials == 0 {
            return Err(Error::config("trials", "must be at least 1"));
        }
        if !(self.precision > 1.0) {
            return Err(Error::config("precision", "must exceed 1"));
        }
        if self.n_start == 0 || self.n_cap < self.n_start {
            return Err(Error::config("n_cap", "need 1 <= n_start <= n_cap"));
        }
        Ok(())
    }

    pub fn resolve_constants(&self) -> Result<Constants> {
        if let Some(c) = &self.constants {
            c.validate()?;
            return Ok(c.clone());
        }
        match &self.constants_file {
            Some(path) => Constants::load(path),
            None => Ok(Constants::default()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchOutcome {
    /// Smallest passing count found; `None` when censored.
    pub n: Option<u64>,
    pub censored: bool,
    pub evaluations: usize,
}

/// Finds the smallest `n` in `[1, cap]` with `passes(n)`, assuming rough
/// monotonicity: doubling from `start` until a pass, then a geometric
/// bisection until the bracket ratio is at most `precision`.
pub fn min_players_search(
    start: u64,
    cap: u64,
    precision: f64,
    mut passes: impl FnMut(u64) -> Result<bool>,
) -> Result<SearchOutcome> {
    let mut evaluations = 0;
    let mut eval = |n: u64| {
        evaluations += 1;
        passes(n)
    };
    let (mut lo, mut hi) = if eval(start)? {
        let mut hi = start;
        loop {
            if hi == 1 {
                return Ok(SearchOutcome {
                    n: Some(1),
                    censored: false,
                    evaluations,
                });
            }
            let lo = hi / 2;
            if eval(lo)? {
                hi = lo;
            } else {
                break (lo, hi);
            }
        }
    } else {
        let mut lo = start;
        loop {
            if lo >= cap {
                return Ok(SearchOutcome {
                    n: None,
                    censored: true,
                    evaluations,
                });
            }
            let next = (lo * 2).min(cap);
            if eval(next)? {
                break (lo, next);
            }
            lo = next;
        }
    };
    while hi as f64 / lo as f64 > precision {
        let mid = ((lo as f64) * (hi as f64)).sqrt().round() as u64;
        if mid <= lo || mid >= hi {
            break;
        }
        if eval(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(SearchOutcome {
        n: Some(hi),
        censored: false,
        evaluations,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    pub protocol: ProtocolId,
    pub k: usize,
    pub min_n: Option<u64>,
    pub censored: bool,
    pub evaluations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolSlope {
    pub protocol: ProtocolId,
    /// Least-squares slope of `ln min_n` on `ln k` over uncensored points.
    pub slope: Option<f64>,
    pub censored_points: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub ell: u32,
    pub eps: f64,
    pub trials: u64,
    pub points: Vec<ScalingPoint>,
    pub slopes: Vec<ProtocolSlope>,
}

impl ScalingReport {
    pub fn slope(&self, protocol: ProtocolId) -> Option<f64> {
        self.slopes.iter().find(|s| s.protocol == protocol).and_then(|s| s.slope)
    }
}

/// Success rates on the uniform and the far instance at `n` players. The
/// trial seeds depend on the protocol, `k` and the trial only, so every `n`
/// sees the same randomness.
pub fn success_rates(
    cfg: &ScalingConfig,
    constants: &Constants,
    protocol: ProtocolId,
    k: usize,
    n: u64,
) -> Result<(f64, f64)> {
    let base = derive(cfg.master_seed, &[protocol as u64, k as u64]);
    let jobs: Vec<(bool, u64)> = [true, false]
        .into_iter()
        .flat_map(|null| (0..cfg.trials).map(move |t| (null, t)))
        .collect();
    let outcomes: Vec<Result<bool>> = jobs
        .par_iter()
        .map(|&(null, trial)| {
            let seed = trial_seed(base, null as u64, trial);
            let p = if null {
                uniform(k)?
            } else {
                far_instance(protocol, k, cfg.eps, seed)?
            };
            let setup = TrialSetup {
                protocol,
                k,
                ell: cfg.ell,
                eps: cfg.eps,
                n: Some(n),
                constants,
                engine: cfg.engine,
                reference: None,
                inner: ProtocolId::Smooth,
            };
            match run_trial(&setup, &p, seed, null) {
                Ok(r) => Ok(trial_success(protocol, &r, cfg.eps, null)),
                Err(Error::Undersized { .. }) => Ok(false),
                Err(e) => Err(e),
            }
        })
        .collect();
    let mut wins = [0u64; 2];
    for (&(null, _), ok) in jobs.iter().zip(outcomes) {
        if ok? {
            wins[null as usize] += 1;
        }
    }
    let t = cfg.trials as f64;
    Ok((wins[1] as f64 / t, wins[0] as f64 / t))
}

/// Minimal player counts for every protocol and `k`, with fitted slopes.
pub fn scaling_report(cfg: &ScalingConfig) -> Result<ScalingReport> {
    cfg.validate()?;
    let constants = cfg.resolve_constants()?;
    with_workers(cfg.workers, || -> Result<ScalingReport> {
        let mut points = Vec::new();
        let mut slopes = Vec::new();
        for &protocol in &cfg.protocols {
            let mut fit = Vec::new();
            let mut censored_points = 0;
            for &k in &cfg.k {
                let outcome = min_players_search(cfg.n_start, cfg.n_cap, cfg.precision, |n| {
                    let (null, far) = success_rates(cfg, &constants, protocol, k, n)?;
                    Ok(null >= cfg.target && far >= cfg.target)
                })?;
                match outcome.n {
                    Some(n) => fit.push((k as f64, n as f64)),
                    None => censored_points += 1,
                }
                points.push(ScalingPoint {
                    protocol,
                    k,
                    min_n: outcome.n,
                    censored: outcome.censored,
                    evaluations: outcome.evaluations,
                });
            }
            slopes.push(ProtocolSlope {
                protocol,
                slope: log_log_slope(&fit),
                censored_points,
            });
        }
        Ok(ScalingReport {
            ell: cfg.ell,
            eps: cfg.eps,
            trials: cfg.trials,
            points,
            slopes,
        })
    })?
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn search_finds_threshold() {
        for threshold in [1u64, 7, 16, 1000, 12345] {
            let out = min_players_search(16, 1 << 20, 1.0001, |n| Ok(n >= threshold)).unwrap();
            assert_eq!(out.n, Some(threshold));
            assert!(!out.censored);
        }
        let out = min_players_search(16, 1000, 1.05, |n| Ok(n >= 5000)).unwrap();
        assert!(out.censored && out.n.is_none());
    }

    #[test]
    fn search_stops_at_precision() {
        let out = min_players_search(16, 1 << 30, 1.05, |n| Ok(n >= 100_000)).unwrap();
        let n = out.n.unwrap();
        assert!(n >= 100_000 && n as f64 <= 100_000.0 * 1.05);
    }

    #[test]
    fn dummy_control_is_flat() {
        let cfg = ScalingConfig {
            schema_version: SCHEMA_VERSION,
            protocols: vec![ProtocolId::Dummy],
            k: vec![8, 16, 32],
            ell: 1,
            eps: 0.5,
            trials: 10,
            master_seed: 1,
            engine: Engine::Counts,
            constants_file: None,
            constants: None,
            n_start: 16,
            n_cap: 1 << 20,
            precision: 1.0001,
            target: 2.0 / 3.0,
            workers: Some(2),
        };
        let report = scaling_report(&cfg).unwrap();
        assert!(report.points.iter().all(|p| p.min_n == Some(1000)));
        assert!(report.slope(ProtocolId::Dummy).unwrap().abs() < 1e-12);
    }

    #[test]
    fn config_needs_three_k() {
        let text = r#"{"schema_version": 1, "protocols": ["levin"], "k": [8, 16], "ell": 2, "eps": 0.3,
                       "master_seed": 0, "n_cap": 100}"#;
        assert!(matches!(ScalingConfig::from_json(text), Err(Error::Config { .. })));
    }
}
