use serde::{Deserialize, Serialize};

use super::{run_smp, ProtocolConfig, SmpProtocol, Verdict};
use crate::dist::Pmf;
use crate::error::Result;

/// How a protocol execution is carried out.
///
/// `Fabric` draws every player's sample and message. `Counts` draws the
/// referee's sufficient statistics (message counts per batch) directly from
/// their exact joint law; the verdict has the same distribution, and the
/// public coins are drawn from the same stream, so both engines see the same
/// partitions and subsets for a given seed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Engine {
    #[default]
    Fabric,
    Counts,
}

/// The result of one execution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub verdict: Verdict,
    pub players: u64,
    pub public_bits: u64,
}

/// Protocols that can also be executed at the level of message counts.
pub trait CountEngine: SmpProtocol {
    fn run_counts(&self, cfg: &ProtocolConfig, p: &Pmf) -> Result<TrialOutcome>;
}

/// Runs one execution on the chosen engine.
pub fn execute<P: CountEngine>(
    cfg: &ProtocolConfig,
    protocol: &P,
    p: &Pmf,
    engine: Engine,
) -> Result<TrialOutcome> {
    match engine {
        Engine::Fabric => {
            let (verdict, transcript) = run_smp(cfg, protocol, p)?;
            Ok(TrialOutcome {
                verdict,
                players: transcript.samples_consumed,
                public_bits: transcript.public_coins.bits(),
            })
        }
        Engine::Counts => {
            cfg.validate()?;
            protocol.run_counts(cfg, p)
        }
    }
}
