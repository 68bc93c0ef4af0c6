//! Experiment configuration files.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::constants::Constants;
use crate::dist::{
    flying_pony, paninski, point_mass, uniform, PaninskiParam, Pmf, SignPattern,
};
use crate::error::{Error, Result};
use crate::seed::SimRng;
use crate::smp::Engine;

pub const SCHEMA_VERSION: u32 = 1;

/// Protocols the harness can run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProtocolId {
    /// Las Vegas distributed simulation of one sample per trial.
    Simulate,
    Smooth,
    Levin,
    Warmup,
    /// Private-coin simulate-and-infer uniformity testing.
    PrivateSi,
    /// Private-coin simulate-and-infer learning.
    SiLearn,
    FlyingPony,
    /// The centralized collision tester on `k` symbols.
    Centralized,
    /// Identity testing through the map to `[5k]` and an inner uniformity protocol.
    Identity,
    /// A control whose outcome is correct exactly when `n ≥ 1000`, for any `k`.
    Dummy,
}

impl ProtocolId {
    pub fn name(self) -> &'static str {
        match self {
            ProtocolId::Simulate => "simulate",
            ProtocolId::Smooth => "smooth",
            ProtocolId::Levin => "levin",
            ProtocolId::Warmup => "warmup",
            ProtocolId::PrivateSi => "private-si",
            ProtocolId::SiLearn => "si-learn",
            ProtocolId::FlyingPony => "flying-pony",
            ProtocolId::Centralized => "centralized",
            ProtocolId::Identity => "identity",
            ProtocolId::Dummy => "dummy",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(name.to_string()))
            .map_err(|_| Error::config("protocol", format!("unknown protocol `{name}`")))
    }

    pub fn uses_public_coins(self) -> bool {
        matches!(self, ProtocolId::Smooth | ProtocolId::Levin | ProtocolId::Warmup)
    }
}

/// How the unknown pmf of each trial is produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InstanceSpec {
    Uniform,
    /// Pairwise perturbation with distance `eps` (the cell's ε when absent).
    /// Signs are fixed when given, else drawn per trial (or once per cell
    /// when `resample` is false).
    Paninski {
        #[serde(default)]
        eps: Option<f64>,
        #[serde(default)]
        theta: Option<Vec<i8>>,
        #[serde(default = "yes")]
        resample: bool,
    },
    FlyingPony {
        pattern: SignPattern,
        #[serde(default = "yes")]
        resample: bool,
    },
    PointMass {
        symbol: usize,
    },
    Pmf {
        probs: Vec<f64>,
    },
    File {
        path: PathBuf,
    },
}

fn yes() -> bool {
    true
}

impl InstanceSpec {
    /// Whether the pmf may differ between trials of one cell.
    pub fn varies_by_trial(&self) -> bool {
        match self {
            InstanceSpec::Paninski { theta, resample, .. } => theta.is_none() && *resample,
            InstanceSpec::FlyingPony { pattern, resample } => *pattern == SignPattern::Random && *resample,
            _ => false,
        }
    }

    /// Whether the instance is uniform by construction.
    pub fn is_uniform(&self, k: usize) -> Result<bool> {
        Ok(match self {
            InstanceSpec::Uniform => true,
            InstanceSpec::Paninski { eps, .. } => *eps == Some(0.0),
            InstanceSpec::FlyingPony { .. } | InstanceSpec::PointMass { .. } => k == 1,
            InstanceSpec::Pmf { .. } | InstanceSpec::File { .. } => {
                let p = self.build(k, 0.0, &mut crate::seed::rng_from_seed(0))?;
                crate::dist::tv(&p, &uniform(k)?)? < 1e-12
            }
        })
    }

    pub fn build(&self, k: usize, cell_eps: f64, rng: &mut SimRng) -> Result<Pmf> {
        let p = match self {
            InstanceSpec::Uniform => uniform(k)?,
            InstanceSpec::Paninski { eps, theta, .. } => {
                let e = eps.unwrap_or(cell_eps);
                let param = match theta {
                    Some(t) => PaninskiParam::new(k, e, t.clone())?,
                    None => PaninskiParam::random(k, e, rng)?,
                };
                paninski(&param)?
            }
            InstanceSpec::FlyingPony { pattern, .. } => flying_pony(k, &pattern.signs(k / 2, rng))?,
            InstanceSpec::PointMass { symbol } => point_mass(k, *symbol)?,
            InstanceSpec::Pmf { probs } => Pmf::new(probs.clone())?,
            InstanceSpec::File { path } => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Error::config("instance.path", format!("{}: {e}", path.display())))?;
                Pmf::from_json(&text)
                    .map_err(|e| Error::config("instance.path", format!("{}: {e}", path.display())))?
            }
        };
        if p.k() != k {
            return Err(Error::config(
                "instance",
                format!("instance has {} symbols but the cell has k = {k}", p.k()),
            ));
        }
        Ok(p)
    }
}

/// Player-count growth laws for scaled grids.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RateForm {
    /// `k / (2^{ℓ/2} ε²)`.
    Public,
    /// `k^{3/2} / (2^ℓ ε²)`.
    Private,
    /// `k² / (2^ℓ ε²)`.
    Learn,
    /// `k`.
    Linear,
}

impl RateForm {
    pub fn value(self, k: usize, ell: u32, eps: f64) -> f64 {
        let (k, l, e2) = (k as f64, 2f64.powi(ell as i32), eps * eps);
        match self {
            RateForm::Public => k / (l.sqrt() * e2),
            RateForm::Private => k.powf(1.5) / (l * e2),
            RateForm::Learn => k * k / (l * e2),
            RateForm::Linear => k,
        }
    }
}

/// How many players each cell gets.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlayerSpec {
    /// The protocol's own requirement at the configured constants.
    #[default]
    Auto,
    /// An explicit list, crossed with the rest of the grid.
    Fixed(Vec<u64>),
    /// `⌈c · form(k, ℓ, ε)⌉`.
    Scaled { c: f64, form: RateForm },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Expect {
    /// Accept on uniform instances (or `p = q` for identity), reject otherwise.
    #[default]
    Auto,
    Accept,
    Reject,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub k: Vec<usize>,
    pub ell: Vec<u32>,
    pub eps: Vec<f64>,
    #[serde(default)]
    pub n: PlayerSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub protocol: ProtocolId,
    pub instance: InstanceSpec,
    pub grid: Grid,
    pub trials: u64,
    pub master_seed: u64,
    #[serde(default)]
    pub engine: Engine,
    #[serde(default)]
    pub expect: Expect,
    /// Calibration file to read constants from.
    #[serde(default)]
    pub constants_file: Option<PathBuf>,
    /// Inline constants; takes precedence over `constants_file`.
    #[serde(default)]
    pub constants: Option<Constants>,
    /// Reference pmf `q` for identity testing.
    #[serde(default)]
    pub reference: Option<InstanceSpec>,
    /// Uniformity protocol used inside identity testing (smooth by default).
    #[serde(default)]
    pub inner: Option<ProtocolId>,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub workers: Option<usize>,
}

/// One grid point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub index: usize,
    pub k: usize,
    pub ell: u32,
    pub eps: f64,
    /// `None` means the protocol's own requirement.
    pub n: Option<u64>,
}

impl ExperimentConfig {
    /// Parses a configuration; errors name the offending key.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::config(if path == "." { "<root>".into() } else { path }, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("configs serialize")
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::config(
                "schema_version",
                format!("expected {SCHEMA_VERSION}, got {}", self.schema_version),
            ));
        }
        if self.trials == 0 {
            return Err(Error::config("trials", "must be at least 1"));
        }
        for (key, empty) in [
            ("grid.k", self.grid.k.is_empty()),
            ("grid.ell", self.grid.ell.is_empty()),
            ("grid.eps", self.grid.eps.is_empty()),
            ("grid.n", matches!(&self.grid.n, PlayerSpec::Fixed(v) if v.is_empty())),
        ] {
            if empty {
                return Err(Error::config(key, "must not be empty"));
            }
        }
        if self.grid.k.contains(&0) {
            return Err(Error::config("grid.k", "k must be at least 1"));
        }
        if self.grid.ell.iter().any(|&l| l == 0 || l > 31) {
            return Err(Error::config("grid.ell", "ell must lie in [1, 31]"));
        }
        if self.grid.eps.iter().any(|&e| !(e > 0.0 && e <= 1.0)) {
            return Err(Error::config("grid.eps", "eps must lie in (0, 1]"));
        }
        if let PlayerSpec::Scaled { c, .. } = self.grid.n {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::config("grid.n.scaled.c", "must be positive"));
            }
        }
        if self.protocol == ProtocolId::Identity && self.reference.is_none() {
            return Err(Error::config("reference", "identity testing needs a reference pmf"));
        }
        if let Some(inner) = self.inner {
            if !matches!(
                inner,
                ProtocolId::Smooth | ProtocolId::Levin | ProtocolId::Warmup | ProtocolId::PrivateSi
            ) {
                return Err(Error::config("inner", format!("`{}` is not a uniformity protocol", inner.name())));
            }
        }
        if self.workers == Some(0) {
            return Err(Error::config("workers", "must be at least 1"));
        }
        Ok(())
    }

    /// The constants in force: inline, then file, then defaults.
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

    /// Grid cells in `k`, `ℓ`, `ε`, `n` order.
    pub fn cells(&self) -> Vec<Cell> {
        let mut cells = Vec::new();
        for &k in &self.grid.k {
            for &ell in &self.grid.ell {
                for &eps in &self.grid.eps {
                    let ns: Vec<Option<u64>> = match &self.grid.n {
                        PlayerSpec::Auto => vec![None],
                        PlayerSpec::Fixed(v) => v.iter().map(|&n| Some(n)).collect(),
                        PlayerSpec::Scaled { c, form } => {
                            vec![Some((c * form.value(k, ell, eps)).ceil() as u64)]
                        }
                    };
                    for n in ns {
                        cells.push(Cell {
                            index: cells.len(),
                            k,
                            ell,
                            eps,
                            n,
                        });
                    }
                }
            }
        }
        cells
    }
}
