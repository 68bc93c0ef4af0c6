use serde::{Deserialize, Serialize};

use super::coins::CoinRecord;
use crate::error::Result;

/// The referee's view of one execution.
///
/// Every player consumes exactly one sample, so `samples_consumed` equals
/// the number of messages for fixed-size protocols; Las Vegas drivers that
/// discard players between batches report the full count here.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub ell: u32,
    pub messages: Vec<u32>,
    pub public_coins: CoinRecord,
    pub samples_consumed: u64,
}

impl Transcript {
    pub fn players(&self) -> u64 {
        self.messages.len() as u64
    }

    /// One JSON record without a trailing newline.
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("transcript serializes")
    }

    pub fn from_json_line(line: &str) -> Result<Self> {
        Ok(serde_json::from_str(line)?)
    }
}
