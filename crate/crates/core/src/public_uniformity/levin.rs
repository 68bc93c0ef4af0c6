//! The multi-scale random-subset protocol.
//!
//! With `s = 2^ℓ − 1` nonzero messages, a player can report which member of
//! a public `s`-subset `S` it saw, or 0 if its sample fell outside `S`. The
//! referee checks that `p(S)` is close to `s/k` and that the conditional
//! distribution on `S` is close to uniform. Far distributions concentrate
//! their deviation on a few subsets at some scale `2^{-j}`, so the protocol
//! runs `L = ⌈log₂(2/ε)⌉` scales, each with `m_j` mini-batches whose
//! per-test accuracy and confidence grow with `j`.
//!
//! Player counts follow the three-term formula of the analysis, multiplied
//! by a common factor `λ` chosen so the schedule uses the configured `n`.

use serde::{Deserialize, Serialize};

use super::{check_eps, random_subset, subset_log2, subset_report_strategy};
use crate::constants::Constants;
use crate::dist::{binomial, multinomial, Pmf, SubsetSpec};
use crate::error::{Error, Result};
use crate::seed::{SimRng, Stream};
use crate::smp::{
    public_coins_for, CountEngine, MessageMap, ProtocolConfig, PublicCoins, SmpProtocol,
    TrialOutcome, Verdict,
};
use crate::testers::{bias_decide, l2_decide};

/// One scale `j` of the schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevinLevel {
    pub j: usize,
    pub eps_j: f64,
    pub m_j: usize,
    pub delta_j: f64,
    /// Players whose messages feed the test of `p(S)`; 0 when `s = k`.
    pub stage1: u64,
    /// Players whose nonzero messages feed the conditional test; 0 when `s = 1`.
    pub stage2: u64,
    /// Fewest conditional samples the second stage accepts to work with.
    pub stage2_req: u64,
    /// ℓ2 parameter of the conditional test, `2·2^{-j}/3`.
    pub gamma_j: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevinSchedule {
    pub k: usize,
    pub s: usize,
    pub eps: f64,
    pub scales: usize,
    pub lambda: f64,
    pub levels: Vec<LevinLevel>,
}

struct Nominal {
    stage1: f64,
    stage2: f64,
    req: f64,
}

impl LevinSchedule {
    /// Builds the schedule scaled to at most `n` players.
    pub fn new(k: usize, ell: u32, eps: f64, n: u64, c: &Constants) -> Result<Self> {
        let (s, scales, shape) = Self::shape(k, ell, eps)?;
        let nominal: Vec<Nominal> = shape.iter().map(|l| Self::nominal(k, s, l, c)).collect();
        let total: f64 = shape
            .iter()
            .zip(&nominal)
            .map(|(l, v)| l.m_j as f64 * (v.stage1 + v.stage2))
            .sum();
        let lambda = n as f64 / total;
        let levels: Vec<LevinLevel> = shape
            .into_iter()
            .zip(nominal)
            .map(|(mut l, v)| {
                l.stage1 = if s < k { ((lambda * v.stage1).floor() as u64).max(1) } else { 0 };
                l.stage2 = if s > 1 { ((lambda * v.stage2).floor() as u64).max(1) } else { 0 };
                l.stage2_req = ((lambda * v.req).ceil() as u64).max(2);
                l
            })
            .collect();
        let schedule = LevinSchedule {
            k,
            s,
            eps,
            scales,
            lambda,
            levels,
        };
        // m_j δ_j = 1/(10(L+5−j)²) exactly, and Σ_{t≥5} 1/t² < 1/4.
        let budget = schedule.delta_budget();
        assert!(budget < 1.0 / 40.0, "confidence budget {budget} is not below 1/40");
        if schedule.players() > n {
            return Err(Error::Undersized {
                needed: schedule.players(),
                got: n,
            });
        }
        Ok(schedule)
    }

    /// Players of the unscaled schedule (`λ = 1`).
    pub fn nominal_players(k: usize, ell: u32, eps: f64, c: &Constants) -> Result<f64> {
        let (s, _, shape) = Self::shape(k, ell, eps)?;
        Ok(shape
            .iter()
            .map(|l| {
                let v = Self::nominal(k, s, l, c);
                l.m_j as f64 * (v.stage1 + v.stage2)
            })
            .sum())
    }

    fn shape(k: usize, ell: u32, eps: f64) -> Result<(usize, usize, Vec<LevinLevel>)> {
        check_eps(eps)?;
        if k < 2 {
            return Err(Error::invalid("uniformity testing needs k >= 2"));
        }
        let s = (((1u64 << ell.min(62)) - 1) as usize).min(k);
        let scales = (2.0 / eps).log2().ceil().max(1.0) as usize;
        let levels = (1..=scales)
            .map(|j| {
                let t = (scales + 5 - j) as f64;
                let pow = 2f64.powi(j as i32);
                let m_j = (5.0 * t * t / (pow * eps)).ceil() as usize;
                LevinLevel {
                    j,
                    eps_j: 1.0 / (8.0 * pow),
                    m_j,
                    delta_j: 1.0 / (10.0 * t * t * m_j as f64),
                    stage1: 0,
                    stage2: 0,
                    stage2_req: 0,
                    gamma_j: 2.0 / (3.0 * pow),
                }
            })
            .collect();
        Ok((s, scales, levels))
    }

    fn nominal(k: usize, s: usize, l: &LevinLevel, c: &Constants) -> Nominal {
        let (kf, sf) = (k as f64, s as f64);
        let log = (1.0 / l.delta_j).ln();
        let e2 = l.eps_j * l.eps_j;
        let req = c.levin_c3 * sf.sqrt() / e2 * log;
        Nominal {
            stage1: if s < k { c.levin_c1 * kf / (sf * e2) * log } else { 0.0 },
            stage2: if s > 1 { c.levin_c2 * (kf / sf) * log * req } else { 0.0 },
            req,
        }
    }

    /// `Σ_j m_j δ_j`.
    pub fn delta_budget(&self) -> f64 {
        self.levels.iter().map(|l| l.m_j as f64 * l.delta_j).sum()
    }

    pub fn mini_batches(&self) -> usize {
        self.levels.iter().map(|l| l.m_j).sum()
    }

    pub fn players(&self) -> u64 {
        self.levels
            .iter()
            .map(|l| l.m_j as u64 * (l.stage1 + l.stage2))
            .sum()
    }
}

/// The smallest `j ∈ [L]` with `P[q(X) > 2^{-j}] > 2^j ε / (L+5−j)²`, `X`
/// uniform over the entries of `q` and `L = ⌈log₂(2/ε)⌉`.
///
/// Fails when the profile is not in `[0, 1]` or its mean is at most `ε`, in
/// which case the statement has no content. `Ok(None)` means no scale
/// qualifies.
pub fn levin_threshold(q: &[f64], eps: f64) -> Result<Option<usize>> {
    check_eps(eps)?;
    if q.is_empty() || q.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::invalid("q values must be a non-empty vector in [0, 1]"));
    }
    let mean = q.iter().sum::<f64>() / q.len() as f64;
    if mean <= eps {
        return Err(Error::domain(format!(
            "mean {mean} is at most eps = {eps}; no scale is guaranteed"
        )));
    }
    let scales = (2.0 / eps).log2().ceil().max(1.0) as usize;
    Ok((1..=scales).find(|&j| {
        let level = 2f64.powi(-(j as i32));
        let frac = q.iter().filter(|&&v| v > level).count() as f64 / q.len() as f64;
        let t = (scales + 5 - j) as f64;
        frac > eps / (level * t * t)
    }))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevinProtocol {
    pub eps: f64,
    pub constants: Constants,
}

impl LevinProtocol {
    pub fn new(eps: f64, constants: Constants) -> Self {
        LevinProtocol { eps, constants }
    }
}

/// A mini-batch: its scale, public subset, shared channel and first player.
#[derive(Clone, Debug)]
pub struct MiniBatch {
    pub level: usize,
    pub subset: SubsetSpec,
    pub map: MessageMap,
    pub start: u64,
}

#[derive(Clone, Debug)]
pub struct LevinPlan {
    pub schedule: LevinSchedule,
    pub batches: Vec<MiniBatch>,
}

impl LevinPlan {
    /// The referee's rule on per-mini-batch statistics: the number of
    /// nonzero messages among the first-stage players and the histogram of
    /// nonzero messages among the second-stage players.
    pub fn decide(&self, stage1_ones: &[u64], stage2_counts: &[Vec<u64>]) -> Verdict {
        let sch = &self.schedule;
        let p0 = sch.s as f64 / sch.k as f64;
        let (mut bias_fail, mut shortfall, mut cond_fail) = (0usize, 0usize, 0usize);
        for (b, batch) in self.batches.iter().enumerate() {
            let level = &sch.levels[batch.level];
            // |p(S) − s/k| < ε_j s/k, the bias rule at relative radius 2ε_j.
            if level.stage1 > 0 && !bias_decide(stage1_ones[b], level.stage1, p0, 2.0 * level.eps_j) {
                bias_fail += 1;
                continue;
            }
            if level.stage2 > 0 {
                let counts = &stage2_counts[b];
                if counts.iter().sum::<u64>() < level.stage2_req {
                    shortfall += 1;
                } else if !l2_decide(counts, None, level.gamma_j).accept {
                    cond_fail += 1;
                }
            }
        }
        let failed = bias_fail + shortfall + cond_fail;
        let v = if failed == 0 {
            Verdict::accept()
        } else {
            Verdict::reject()
        };
        v.with("stage1_failures", bias_fail as f64)
            .with("stage2_shortfalls", shortfall as f64)
            .with("stage2_failures", cond_fail as f64)
    }

    fn batch_of(&self, player: u64) -> usize {
        self.batches.partition_point(|b| b.start <= player) - 1
    }
}

impl SmpProtocol for LevinProtocol {
    type Plan = LevinPlan;

    fn plan(&self, cfg: &ProtocolConfig, coins: &mut PublicCoins) -> Result<LevinPlan> {
        let schedule = LevinSchedule::new(cfg.k, cfg.ell, self.eps, cfg.n, &self.constants)?;
        let (k, s) = (schedule.k, schedule.s);
        let bits = subset_log2(k, s);
        let mut batches = Vec::with_capacity(schedule.mini_batches());
        let mut start = 0u64;
        for (level, l) in schedule.levels.iter().enumerate() {
            for t in 0..l.m_j {
                let subset = coins.draw(&format!("subset[{}][{t}]", l.j), bits, |rng| {
                    random_subset(k, s, rng)
                })?;
                let map = subset_report_strategy(&subset, cfg.ell)?;
                batches.push(MiniBatch {
                    level,
                    subset,
                    map,
                    start,
                });
                start += l.stage1 + l.stage2;
            }
        }
        Ok(LevinPlan { schedule, batches })
    }

    fn players(&self, plan: &LevinPlan) -> u64 {
        plan.schedule.players()
    }

    fn strategy<'a>(&self, plan: &'a LevinPlan, player: u64) -> &'a MessageMap {
        &plan.batches[plan.batch_of(player)].map
    }

    fn referee(&self, plan: &LevinPlan, messages: &[u32], _rng: &mut SimRng) -> Result<Verdict> {
        let s = plan.schedule.s;
        let mut ones = Vec::with_capacity(plan.batches.len());
        let mut hists = Vec::with_capacity(plan.batches.len());
        for batch in &plan.batches {
            let level = &plan.schedule.levels[batch.level];
            let a = batch.start as usize;
            let b = a + level.stage1 as usize;
            let c = b + level.stage2 as usize;
            ones.push(messages[a..b].iter().filter(|&&m| m != 0).count() as u64);
            let mut h = vec![0u64; s];
            for &m in messages[b..c].iter().filter(|&&m| m != 0) {
                h[m as usize - 1] += 1;
            }
            hists.push(h);
        }
        Ok(plan.decide(&ones, &hists))
    }
}

impl CountEngine for LevinProtocol {
    fn run_counts(&self, cfg: &ProtocolConfig, p: &Pmf) -> Result<TrialOutcome> {
        let mut coins = public_coins_for(cfg, Stream::Public.seed(cfg.master_seed));
        let plan = self.plan(cfg, &mut coins)?;
        let mut nature = Stream::Nature.rng(cfg.master_seed);
        let s = plan.schedule.s;
        let mut ones = Vec::with_capacity(plan.batches.len());
        let mut hists = Vec::with_capacity(plan.batches.len());
        for batch in &plan.batches {
            let level = &plan.schedule.levels[batch.level];
            let inside: Vec<f64> = batch.subset.members().iter().map(|&x| p.prob(x)).collect();
            let mass: f64 = inside.iter().sum();
            ones.push(binomial(level.stage1, mass, &mut nature));
            let mut weights = inside;
            weights.push((1.0 - mass).max(0.0));
            let mut h = multinomial(level.stage2, &Pmf::from_weights(&weights)?, &mut nature);
            h.truncate(s);
            hists.push(h);
        }
        Ok(TrialOutcome {
            verdict: plan.decide(&ones, &hists),
            players: plan.schedule.players(),
            public_bits: coins.bits(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;
    use crate::smp::{description_bits, execute, CoinMode, Engine};
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn schedule_at_three_tenths() {
        let c = Constants::default();
        let n = LevinSchedule::nominal_players(64, 2, 0.3, &c).unwrap() as u64;
        let s = LevinSchedule::new(64, 2, 0.3, n, &c).unwrap();
        assert_eq!(s.scales, 3);
        assert_eq!(s.s, 3);
        let m: Vec<usize> = s.levels.iter().map(|l| l.m_j).collect();
        assert_eq!(m, vec![409, 150, 53]);
        for l in &s.levels {
            let t = (s.scales + 5 - l.j) as f64;
            assert!((l.m_j as f64 * l.delta_j - 1.0 / (10.0 * t * t)).abs() < 1e-15);
            assert!(l.stage1 >= 1 && l.stage2 >= 1);
        }
        assert!(s.delta_budget() < 1.0 / 40.0);
        assert!((s.lambda - 1.0).abs() < 1e-6);
        assert!(s.players() <= n);
    }

    #[test]
    fn budget_below_a_fortieth_everywhere() {
        let c = Constants::default();
        for eps in [0.01, 0.05, 0.1, 0.25, 0.3, 0.5, 0.9, 1.0] {
            for (k, ell) in [(2, 1), (16, 1), (64, 2), (1000, 5)] {
                let n = 2 * LevinSchedule::nominal_players(k, ell, eps, &c).unwrap() as u64;
                let s = LevinSchedule::new(k, ell, eps, n, &c).unwrap();
                assert!(s.delta_budget() < 1.0 / 40.0);
            }
        }
    }

    #[test]
    fn stages_switch_off_at_the_edges() {
        let c = Constants::default();
        let s = LevinSchedule::new(16, 1, 0.3, 1 << 40, &c).unwrap();
        assert_eq!(s.s, 1);
        assert!(s.levels.iter().all(|l| l.stage2 == 0 && l.stage1 > 0));
        let s = LevinSchedule::new(3, 2, 0.3, 1 << 40, &c).unwrap();
        assert_eq!(s.s, 3);
        assert!(s.levels.iter().all(|l| l.stage1 == 0 && l.stage2 > 0));
        assert!(LevinSchedule::new(16, 2, 0.3, 10, &c).is_err());
    }

    #[test]
    fn threshold_examples() {
        assert_eq!(levin_threshold(&[1.0, 0.0], 0.4).unwrap(), Some(1));
        assert_eq!(levin_threshold(&[1.0; 5], 0.7).unwrap(), Some(1));
        assert!(matches!(levin_threshold(&[0.1, 0.1], 0.3), Err(Error::Domain(_))));
        assert!(levin_threshold(&[1.5], 0.3).is_err());
    }

    proptest! {
        #[test]
        fn a_scale_always_exists(seed in any::<u64>(), len in 1usize..200, eps in 0.02f64..0.9) {
            let mut rng = rng_from_seed(seed);
            let shape: f64 = rng.random_range(0.2..5.0);
            let q: Vec<f64> = (0..len).map(|_| rng.random::<f64>().powf(shape)).collect();
            let mean = q.iter().sum::<f64>() / len as f64;
            prop_assume!(mean > eps);
            prop_assert!(levin_threshold(&q, eps).unwrap().is_some());
        }
    }

    #[test]
    fn public_bits_match_the_subset_count() {
        let c = Constants::default();
        let n = LevinSchedule::nominal_players(16, 2, 0.5, &c).unwrap() as u64 / 1000;
        let cfg = ProtocolConfig::new(16, 2, n, CoinMode::Public, 4).unwrap();
        let proto = LevinProtocol::new(0.5, c.clone());
        let p = crate::dist::uniform(16).unwrap();
        let a = execute(&cfg, &proto, &p, Engine::Fabric).unwrap();
        let b = execute(&cfg, &proto, &p, Engine::Counts).unwrap();
        let sch = LevinSchedule::new(16, 2, 0.5, n, &c).unwrap();
        let per = description_bits(subset_log2(16, 3));
        assert_eq!(per, 10);
        assert_eq!(a.public_bits, sch.mini_batches() as u64 * per);
        assert_eq!(a.public_bits, b.public_bits);
        assert_eq!(a.players, b.players);
    }
}
