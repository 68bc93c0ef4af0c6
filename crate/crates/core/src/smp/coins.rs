use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{rng_from_seed, SimRng};

/// One logged public draw: what it was for and how many bits it costs to
/// describe its outcome (`⌈log₂ #outcomes⌉`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoinDraw {
    pub label: String,
    pub bits: u64,
}

/// The realized public randomness of one execution: the shared seed and the
/// log of every draw made from it.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CoinRecord {
    pub seed: Option<u64>,
    pub draws: Vec<CoinDraw>,
}

impl CoinRecord {
    pub fn bits(&self) -> u64 {
        self.draws.iter().map(|d| d.bits).sum()
    }
}

/// The shared public coins. In private-coin executions the coins are
/// unavailable and every draw fails.
#[derive(Debug)]
pub struct PublicCoins {
    rng: Option<SimRng>,
    record: CoinRecord,
}

impl PublicCoins {
    pub fn new(seed: u64) -> Self {
        PublicCoins {
            rng: Some(rng_from_seed(seed)),
            record: CoinRecord {
                seed: Some(seed),
                draws: Vec::new(),
            },
        }
    }

    pub fn unavailable() -> Self {
        PublicCoins {
            rng: None,
            record: CoinRecord::default(),
        }
    }

    pub fn is_available(&self) -> bool {
        self.rng.is_some()
    }

    /// Performs one logged draw whose outcome space has `2^log2_outcomes` elements.
    pub fn draw<T>(
        &mut self,
        label: &str,
        log2_outcomes: f64,
        f: impl FnOnce(&mut SimRng) -> Result<T>,
    ) -> Result<T> {
        let rng = self.rng.as_mut().ok_or_else(|| {
            Error::Unsupported(format!(
                "public draw `{label}` requested in a private-coin execution"
            ))
        })?;
        let value = f(rng)?;
        self.record.draws.push(CoinDraw {
            label: label.to_string(),
            bits: description_bits(log2_outcomes),
        });
        Ok(value)
    }

    pub fn record(&self) -> &CoinRecord {
        &self.record
    }

    pub fn into_record(self) -> CoinRecord {
        self.record
    }

    pub fn bits(&self) -> u64 {
        self.record.bits()
    }
}

/// `⌈log₂ N⌉` from `log₂ N`, tolerant of rounding just above an integer.
pub fn description_bits(log2_outcomes: f64) -> u64 {
    if log2_outcomes <= 0.0 {
        return 0;
    }
    (log2_outcomes - 1e-9).ceil() as u64
}
