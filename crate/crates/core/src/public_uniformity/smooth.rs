//! The random-partition protocol.
//!
//! Players are split into `m` batches of `N`. Each batch draws a fresh
//! balanced partition of `[k]` into `L = min(2^ℓ, k)` parts and every player
//! sends the index of the part containing its sample. A uniform `p` induces
//! exactly the uniform pmf on the parts; an ε-far `p` induces, with constant
//! probability over the partition, a pmf at squared ℓ2 distance more than
//! `ε²/k` from it. The referee runs the ℓ2 test on each batch at
//! `γ = √L·ε/√k` and rejects if any batch rejects.

use serde::{Deserialize, Serialize};

use super::{balanced_partition_log2, check_eps, parts_for, random_balanced_partition};
use crate::constants::Constants;
use crate::dist::{flatten, multinomial, Partition, Pmf};
use crate::error::{Error, Result};
use crate::seed::{SimRng, Stream};
use crate::smp::{
    public_coins_for, CountEngine, MessageMap, ProtocolConfig, SmpProtocol, TrialOutcome, Verdict,
};
use crate::testers::{l2_decide, L2TestParams};

/// Batch structure of the random-partition protocol.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothSchedule {
    pub k: usize,
    pub l: usize,
    pub m: usize,
    pub per_batch: u64,
    pub delta: f64,
    pub gamma: f64,
}

impl SmoothSchedule {
    /// Splits `n` players into the configured number of batches and checks
    /// that each batch meets the ℓ2 test's sample requirement.
    pub fn new(k: usize, ell: u32, eps: f64, n: u64, c: &Constants) -> Result<Self> {
        let s = Self::shape(k, ell, eps, c)?;
        let need = s.required_per_batch(c)?;
        let per_batch = n / s.m as u64;
        if per_batch < need {
            return Err(Error::Undersized {
                needed: need * s.m as u64,
                got: n,
            });
        }
        Ok(SmoothSchedule { per_batch, ..s })
    }

    /// The fewest players for which [`SmoothSchedule::new`] succeeds.
    pub fn min_players(k: usize, ell: u32, eps: f64, c: &Constants) -> Result<u64> {
        let s = Self::shape(k, ell, eps, c)?;
        Ok(s.required_per_batch(c)? * s.m as u64)
    }

    fn shape(k: usize, ell: u32, eps: f64, c: &Constants) -> Result<Self> {
        check_eps(eps)?;
        if k < 2 {
            return Err(Error::invalid("uniformity testing needs k >= 2"));
        }
        let l = parts_for(k, ell);
        let m = c.smooth_batches;
        Ok(SmoothSchedule {
            k,
            l,
            m,
            per_batch: 0,
            delta: 1.0 / (6.0 * m as f64),
            gamma: (l as f64).sqrt() * eps / (k as f64).sqrt(),
        })
    }

    fn required_per_batch(&self, c: &Constants) -> Result<u64> {
        Ok(L2TestParams::new(self.l, self.gamma, self.delta)?.n_req(c.c_smooth))
    }

    pub fn players(&self) -> u64 {
        self.per_batch * self.m as u64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothProtocol {
    pub eps: f64,
    pub constants: Constants,
}

impl SmoothProtocol {
    pub fn new(eps: f64, constants: Constants) -> Self {
        SmoothProtocol { eps, constants }
    }
}

#[derive(Clone, Debug)]
pub struct SmoothPlan {
    pub schedule: SmoothSchedule,
    pub partitions: Vec<Partition>,
    maps: Vec<MessageMap>,
    /// The induced null when the parts are not all of equal size.
    null: Option<Vec<f64>>,
}

impl SmoothPlan {
    /// Accepts iff every batch histogram passes the ℓ2 test.
    pub fn decide(&self, batch_counts: &[Vec<u64>]) -> Verdict {
        let gamma = self.schedule.gamma;
        let mut rejecting = 0usize;
        let mut max_excess = f64::NEG_INFINITY;
        for counts in batch_counts {
            let out = l2_decide(counts, self.null.as_deref(), gamma);
            if !out.accept {
                rejecting += 1;
            }
            max_excess = max_excess.max(out.statistic - out.threshold);
        }
        let v = if rejecting == 0 {
            Verdict::accept()
        } else {
            Verdict::reject()
        };
        v.with("rejecting_batches", rejecting as f64)
            .with("max_excess", max_excess)
    }
}

impl SmpProtocol for SmoothProtocol {
    type Plan = SmoothPlan;

    fn plan(&self, cfg: &ProtocolConfig, coins: &mut crate::smp::PublicCoins) -> Result<SmoothPlan> {
        let schedule = SmoothSchedule::new(cfg.k, cfg.ell, self.eps, cfg.n, &self.constants)?;
        let (k, l) = (schedule.k, schedule.l);
        let bits = balanced_partition_log2(k, l);
        let mut partitions = Vec::with_capacity(schedule.m);
        let mut maps = Vec::with_capacity(schedule.m);
        for b in 0..schedule.m {
            let part = coins.draw(&format!("partition[{b}]"), bits, |rng| {
                random_balanced_partition(k, l, rng)
            })?;
            let table = part.assign().iter().map(|&r| r as u32).collect();
            maps.push(MessageMap::deterministic(cfg.ell, table)?);
            partitions.push(part);
        }
        let null = if k % l == 0 {
            None
        } else {
            Some(partitions[0].sizes().iter().map(|&s| s as f64 / k as f64).collect())
        };
        Ok(SmoothPlan {
            schedule,
            partitions,
            maps,
            null,
        })
    }

    fn players(&self, plan: &SmoothPlan) -> u64 {
        plan.schedule.players()
    }

    fn strategy<'a>(&self, plan: &'a SmoothPlan, player: u64) -> &'a MessageMap {
        &plan.maps[(player / plan.schedule.per_batch) as usize]
    }

    fn referee(&self, plan: &SmoothPlan, messages: &[u32], _rng: &mut SimRng) -> Result<Verdict> {
        let n = plan.schedule.per_batch as usize;
        let counts: Vec<Vec<u64>> = messages
            .chunks(n)
            .map(|batch| {
                let mut h = vec![0u64; plan.schedule.l];
                for &m in batch {
                    h[m as usize] += 1;
                }
                h
            })
            .collect();
        Ok(plan.decide(&counts))
    }
}

impl CountEngine for SmoothProtocol {
    fn run_counts(&self, cfg: &ProtocolConfig, p: &Pmf) -> Result<TrialOutcome> {
        let mut coins = public_coins_for(cfg, Stream::Public.seed(cfg.master_seed));
        let plan = self.plan(cfg, &mut coins)?;
        let mut nature = Stream::Nature.rng(cfg.master_seed);
        let mut counts = Vec::with_capacity(plan.partitions.len());
        for part in &plan.partitions {
            let q = flatten(p, part)?;
            counts.push(multinomial(plan.schedule.per_batch, &q, &mut nature));
        }
        Ok(TrialOutcome {
            verdict: plan.decide(&counts),
            players: plan.schedule.players(),
            public_bits: coins.bits(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::{paninski, uniform, PaninskiParam};
    use crate::seed::rng_from_seed;
    use crate::smp::{execute, run_smp, CoinMode, Engine};

    fn success_rate(engine: Engine, k: usize, ell: u32, far: bool, trials: u64) -> f64 {
        let c = Constants::default();
        let eps = 0.3;
        let n = SmoothSchedule::min_players(k, ell, eps, &c).unwrap();
        let proto = SmoothProtocol::new(eps, c);
        let mut ok = 0;
        for t in 0..trials {
            let p = if far {
                let mut rng = rng_from_seed(10_000 + t);
                paninski(&PaninskiParam::random(k, eps, &mut rng).unwrap()).unwrap()
            } else {
                uniform(k).unwrap()
            };
            let cfg = ProtocolConfig::new(k, ell, n, CoinMode::Public, t).unwrap();
            let out = execute(&cfg, &proto, &p, engine).unwrap();
            if out.verdict.is_reject() == far {
                ok += 1;
            }
        }
        ok as f64 / trials as f64
    }

    #[test]
    fn schedule_arithmetic() {
        let c = Constants::default();
        let n = SmoothSchedule::min_players(64, 2, 0.3, &c).unwrap();
        let s = SmoothSchedule::new(64, 2, 0.3, n, &c).unwrap();
        assert_eq!(s.l, 4);
        assert!((s.delta * s.m as f64 - 1.0 / 6.0).abs() < 1e-15);
        assert_eq!(s.players(), n);
        assert!((s.gamma - 2.0 * 0.3 / 8.0).abs() < 1e-15);
        assert!(matches!(
            SmoothSchedule::new(64, 2, 0.3, n - 1, &c),
            Err(Error::Undersized { .. })
        ));
    }

    #[test]
    fn private_coins_are_refused() {
        let c = Constants::default();
        let n = SmoothSchedule::min_players(16, 1, 0.3, &c).unwrap();
        let cfg = ProtocolConfig::new(16, 1, n, CoinMode::Private, 0).unwrap();
        let err = run_smp(&cfg, &SmoothProtocol::new(0.3, c), &uniform(16).unwrap());
        assert!(matches!(err, Err(Error::Unsupported(_))));
    }

    #[test]
    fn both_engines_separate_null_and_far() {
        for engine in [Engine::Fabric, Engine::Counts] {
            assert!(success_rate(engine, 16, 2, false, 60) >= 0.9);
            assert!(success_rate(engine, 16, 2, true, 60) >= 0.9);
        }
    }

    #[test]
    fn engines_share_public_draws() {
        let c = Constants::default();
        let n = SmoothSchedule::min_players(16, 1, 0.3, &c).unwrap();
        let cfg = ProtocolConfig::new(16, 1, n, CoinMode::Public, 5).unwrap();
        let proto = SmoothProtocol::new(0.3, c);
        let p = uniform(16).unwrap();
        let a = execute(&cfg, &proto, &p, Engine::Fabric).unwrap();
        let b = execute(&cfg, &proto, &p, Engine::Counts).unwrap();
        assert_eq!(a.public_bits, b.public_bits);
        assert_eq!(a.players, b.players);
        // 12 partitions of 16 symbols into 2 parts of 8.
        let per = crate::smp::description_bits(balanced_partition_log2(16, 2));
        assert_eq!(a.public_bits, 12 * per);
    }

    #[test]
    fn uneven_parts_use_the_induced_null() {
        let c = Constants::default();
        let k = 10;
        let n = SmoothSchedule::min_players(k, 2, 0.3, &c).unwrap();
        let proto = SmoothProtocol::new(0.3, c);
        let mut accepted = 0;
        for seed in 0..50 {
            let cfg = ProtocolConfig::new(k, 2, n, CoinMode::Public, seed).unwrap();
            let out = execute(&cfg, &proto, &uniform(k).unwrap(), Engine::Counts).unwrap();
            accepted += out.verdict.is_accept() as usize;
        }
        assert!(accepted >= 45, "accepted {accepted}/50");
    }

    #[test]
    fn full_width_messages_use_singletons() {
        let c = Constants::default();
        let n = SmoothSchedule::min_players(8, 3, 0.3, &c).unwrap();
        let cfg = ProtocolConfig::new(8, 3, n, CoinMode::Public, 1).unwrap();
        let mut coins = public_coins_for(&cfg, 7);
        let plan = SmoothProtocol::new(0.3, c).plan(&cfg, &mut coins).unwrap();
        assert!(plan.partitions.iter().all(|p| p.sizes() == vec![1; 8]));
    }
}
