//! The warmup protocol: bias-test single random symbols.
//!
//! If `p` is ε-far from uniform, an Ω(ε) fraction of the symbols carries a
//! deviation of order ε/k. Each of `m = ⌈5/ε⌉` batches draws one public
//! symbol `i` and its players send the bit `1{x = i}`; the referee checks
//! the bit frequency against `1/k` and rejects if any batch deviates.

use serde::{Deserialize, Serialize};

use super::check_eps;
use crate::constants::Constants;
use crate::dist::{binomial, Pmf};
use crate::error::{Error, Result};
use crate::seed::{SimRng, Stream};
use crate::smp::{
    public_coins_for, CountEngine, MessageMap, ProtocolConfig, PublicCoins, SmpProtocol,
    TrialOutcome, Verdict,
};
use crate::testers::bias_decide;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WarmupSchedule {
    pub k: usize,
    pub m: usize,
    pub per_batch: u64,
    pub delta: f64,
    /// Relative deviation tested in each batch.
    pub alpha: f64,
}

impl WarmupSchedule {
    pub fn new(k: usize, eps: f64, n: u64, c: &Constants) -> Result<Self> {
        let s = Self::shape(k, eps)?;
        let need = s.required_per_batch(eps, c);
        let per_batch = n / s.m as u64;
        if per_batch < need {
            return Err(Error::Undersized {
                needed: need * s.m as u64,
                got: n,
            });
        }
        Ok(WarmupSchedule { per_batch, ..s })
    }

    pub fn min_players(k: usize, eps: f64, c: &Constants) -> Result<u64> {
        let s = Self::shape(k, eps)?;
        Ok(s.required_per_batch(eps, c) * s.m as u64)
    }

    fn shape(k: usize, eps: f64) -> Result<Self> {
        check_eps(eps)?;
        if k < 2 {
            return Err(Error::invalid("uniformity testing needs k >= 2"));
        }
        let m = (5.0 / eps).ceil() as usize;
        Ok(WarmupSchedule {
            k,
            m,
            per_batch: 0,
            delta: 1.0 / (10.0 * m as f64),
            alpha: eps / 2.0,
        })
    }

    /// `⌈c_warmup · k · ln(1/δ) / ε²⌉`.
    fn required_per_batch(&self, eps: f64, c: &Constants) -> u64 {
        (c.c_warmup * self.k as f64 * (1.0 / self.delta).ln() / (eps * eps)).ceil() as u64
    }

    pub fn players(&self) -> u64 {
        self.per_batch * self.m as u64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WarmupProtocol {
    pub eps: f64,
    pub constants: Constants,
}

impl WarmupProtocol {
    pub fn new(eps: f64, constants: Constants) -> Self {
        WarmupProtocol { eps, constants }
    }
}

#[derive(Clone, Debug)]
pub struct WarmupPlan {
    pub schedule: WarmupSchedule,
    pub symbols: Vec<usize>,
    maps: Vec<MessageMap>,
}

impl WarmupPlan {
    pub fn decide(&self, ones: &[u64]) -> Verdict {
        let s = &self.schedule;
        let p0 = 1.0 / s.k as f64;
        let rejecting = ones
            .iter()
            .filter(|&&c| !bias_decide(c, s.per_batch, p0, s.alpha))
            .count();
        let v = if rejecting == 0 {
            Verdict::accept()
        } else {
            Verdict::reject()
        };
        v.with("rejecting_batches", rejecting as f64)
    }
}

impl SmpProtocol for WarmupProtocol {
    type Plan = WarmupPlan;

    fn plan(&self, cfg: &ProtocolConfig, coins: &mut PublicCoins) -> Result<WarmupPlan> {
        let schedule = WarmupSchedule::new(cfg.k, self.eps, cfg.n, &self.constants)?;
        let k = schedule.k;
        let mut symbols = Vec::with_capacity(schedule.m);
        let mut maps = Vec::with_capacity(schedule.m);
        for b in 0..schedule.m {
            let i = coins.draw(&format!("symbol[{b}]"), (k as f64).log2(), |rng| {
                Ok(rand::Rng::random_range(rng, 0..k))
            })?;
            let table = (0..k).map(|x| (x == i) as u32).collect();
            maps.push(MessageMap::deterministic(cfg.ell, table)?);
            symbols.push(i);
        }
        Ok(WarmupPlan {
            schedule,
            symbols,
            maps,
        })
    }

    fn players(&self, plan: &WarmupPlan) -> u64 {
        plan.schedule.players()
    }

    fn strategy<'a>(&self, plan: &'a WarmupPlan, player: u64) -> &'a MessageMap {
        &plan.maps[(player / plan.schedule.per_batch) as usize]
    }

    fn referee(&self, plan: &WarmupPlan, messages: &[u32], _rng: &mut SimRng) -> Result<Verdict> {
        let ones: Vec<u64> = messages
            .chunks(plan.schedule.per_batch as usize)
            .map(|b| b.iter().filter(|&&m| m == 1).count() as u64)
            .collect();
        Ok(plan.decide(&ones))
    }
}

impl CountEngine for WarmupProtocol {
    fn run_counts(&self, cfg: &ProtocolConfig, p: &Pmf) -> Result<TrialOutcome> {
        let mut coins = public_coins_for(cfg, Stream::Public.seed(cfg.master_seed));
        let plan = self.plan(cfg, &mut coins)?;
        let mut nature = Stream::Nature.rng(cfg.master_seed);
        let ones: Vec<u64> = plan
            .symbols
            .iter()
            .map(|&i| binomial(plan.schedule.per_batch, p.prob(i), &mut nature))
            .collect();
        Ok(TrialOutcome {
            verdict: plan.decide(&ones),
            players: plan.schedule.players(),
            public_bits: coins.bits(),
        })
    }
}
