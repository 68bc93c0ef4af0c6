//! Tunable constants of the testers and protocols.
//!
//! The analysis fixes the structure of every protocol but leaves its
//! constants unspecified. The defaults below are starting points; the
//! calibration harness searches for smaller values and writes them to a JSON
//! file that can be loaded back with [`Constants::load`].

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Constants {
    /// ℓ2 tester: `n_req = ⌈c_l2 · √L / γ² · ln(1/δ)⌉`.
    pub c_l2: f64,
    /// Bias tester: `n_req = ⌈c_bias · ln(2/δ) / (p0 α²)⌉`.
    pub c_bias: f64,
    /// Number of batches of the smooth protocol.
    pub smooth_batches: usize,
    /// ℓ2 constant used for each smooth-protocol batch.
    pub c_smooth: f64,
    /// Levin protocol player-count constants.
    pub levin_c1: f64,
    pub levin_c2: f64,
    pub levin_c3: f64,
    /// Warmup protocol: `n′ = ⌈c_warmup · k · ln(1/δ) / ε²⌉` players per batch.
    pub c_warmup: f64,
    /// Flying-pony protocol: `n = c_pony · k`.
    pub c_pony: f64,
    /// Simulate-and-infer learning: `ψ = ⌈c_learn · k / ε²⌉` samples.
    pub c_learn: f64,
    /// Simulate-and-infer uniformity: `ψ = ⌈c_si_uniformity · √k / ε²⌉` samples.
    pub c_si_uniformity: f64,
}

impl Default for Constants {
    fn default() -> Self {
        Constants {
            c_l2: 6.0,
            c_bias: 12.0,
            smooth_batches: 12,
            c_smooth: 6.0,
            levin_c1: 8.0,
            levin_c2: 4.0,
            levin_c3: 10.0,
            c_warmup: 48.0,
            c_pony: 40.0,
            c_learn: 1.0,
            c_si_uniformity: 1.65,
        }
    }
}

impl Constants {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("c_l2", self.c_l2),
            ("c_bias", self.c_bias),
            ("c_smooth", self.c_smooth),
            ("levin_c1", self.levin_c1),
            ("levin_c2", self.levin_c2),
            ("levin_c3", self.levin_c3),
            ("c_warmup", self.c_warmup),
            ("c_pony", self.c_pony),
            ("c_learn", self.c_learn),
            ("c_si_uniformity", self.c_si_uniformity),
        ];
        for (key, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(key, format!("must be positive and finite, got {v}")));
            }
        }
        if self.smooth_batches == 0 {
            return Err(Error::config("smooth_batches", "must be at least 1"));
        }
        Ok(())
    }

    /// Names of the tunable fields, as they appear in JSON.
    pub const KEYS: [&'static str; 11] = [
        "c_l2",
        "c_bias",
        "smooth_batches",
        "c_smooth",
        "levin_c1",
        "levin_c2",
        "levin_c3",
        "c_warmup",
        "c_pony",
        "c_learn",
        "c_si_uniformity",
    ];

    pub fn get(&self, key: &str) -> Result<f64> {
        serde_json::to_value(self)?
            .get(key)
            .and_then(|v| v.as_f64())
            .ok_or_else(|| Error::config(key, "no such constant"))
    }

    /// Sets one constant by name; `smooth_batches` is rounded to an integer.
    pub fn set(&mut self, key: &str, value: f64) -> Result<()> {
        let mut obj = serde_json::to_value(&*self)?;
        let slot = obj
            .get_mut(key)
            .ok_or_else(|| Error::config(key, "no such constant"))?;
        *slot = if key == "smooth_batches" {
            serde_json::json!(value.round().max(0.0) as u64)
        } else {
            serde_json::json!(value)
        };
        let updated: Constants =
            serde_json::from_value(obj).map_err(|e| Error::config(key, e.to_string()))?;
        updated.validate()?;
        *self = updated;
        Ok(())
    }

    /// Reads constants from a JSON file. The file may be a bare constants
    /// object or a calibration report with a `constants` field.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let value: serde_json::Value = serde_json::from_str(&text)?;
        let body = value.get("constants").cloned().unwrap_or(value);
        let constants: Constants = serde_json::from_value(body)
            .map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
        constants.validate()?;
        Ok(constants)
    }
}
