//! Private-coin simulate-and-infer, and the one-bit protocol for the
//! flying-pony family.
//!
//! Simulate-and-infer splits the players into blocks. Each block runs up to
//! three batches of the distributed simulation and contributes the first
//! sample any of them declares; a batch succeeds with probability at least
//! 1/4, so a block succeeds with probability at least `1 − (3/4)³ > 1/2`.
//! The referee runs a centralized learner or tester on the first `ψ`
//! simulated samples and reports an inconclusive abort if fewer arrive.
//!
//! The flying-pony protocol asks every player a single question, "is your
//! sample symbol 0?", and compares the count of yes answers with the three
//! candidate biases 0, 1/k and 2/k.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::constants::Constants;
use crate::dist::{binomial, multinomial, Pmf};
use crate::error::{Error, Result};
use crate::seed::{SimRng, Stream};
use crate::simulate::{referee_batch, BatchLayout};
use crate::smp::{
    run_smp, AbortReason, CoinMode, CountEngine, Decision, MessageMap, ProtocolConfig, PublicCoins,
    SmpProtocol, TrialOutcome, Verdict,
};
use crate::testers::{centralized_decide, learn_from_counts};

/// Batches per simulate-and-infer block.
pub const BATCHES_PER_BLOCK: u64 = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InferTask {
    /// Output the empirical pmf of the simulated samples.
    Learn,
    /// Run the centralized collision tester on the simulated samples.
    Uniformity,
}

/// Simulate-and-infer with `ψ` centralized samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulateAndInfer {
    pub task: InferTask,
    pub eps: f64,
    pub psi: u64,
}

impl SimulateAndInfer {
    pub fn new(task: InferTask, eps: f64, psi: u64) -> Result<Self> {
        if !(eps > 0.0 && eps <= 1.0) {
            return Err(Error::invalid(format!("eps = {eps} must lie in (0, 1]")));
        }
        let least = match task {
            InferTask::Learn => 1,
            InferTask::Uniformity => 2,
        };
        if psi < least {
            return Err(Error::invalid(format!("psi = {psi} must be at least {least}")));
        }
        Ok(SimulateAndInfer { task, eps, psi })
    }

    /// Learning with `ψ = ⌈c_learn · k / ε²⌉`.
    pub fn learn(k: usize, eps: f64, c: &Constants) -> Result<Self> {
        let psi = (c.c_learn * k as f64 / (eps * eps)).ceil() as u64;
        SimulateAndInfer::new(InferTask::Learn, eps, psi.max(1))
    }

    /// Uniformity testing with `ψ = ⌈c_si_uniformity · √k / ε²⌉`.
    pub fn uniformity(k: usize, eps: f64, c: &Constants) -> Result<Self> {
        let psi = (c.c_si_uniformity * (k as f64).sqrt() / (eps * eps)).ceil() as u64;
        SimulateAndInfer::new(InferTask::Uniformity, eps, psi.max(2))
    }

    /// Blocks needed so that at least `ψ` succeed with probability 14/15: `4ψ + 9`.
    pub fn default_blocks(&self) -> u64 {
        4 * self.psi + 9
    }

    /// Players in one block.
    pub fn block_players(k: usize, ell: u32) -> Result<u64> {
        Ok(BATCHES_PER_BLOCK * BatchLayout::final_scheme(k, ell)?.batch_size())
    }

    /// `default_blocks` blocks worth of players.
    pub fn default_players(&self, k: usize, ell: u32) -> Result<u64> {
        Ok(self.default_blocks() * Self::block_players(k, ell)?)
    }

    fn conclude(&self, k: usize, samples: &[usize], blocks: u64) -> Result<Verdict> {
        let successes = samples.len() as u64;
        if successes < self.psi {
            return Ok(Verdict::abort(AbortReason::Inconclusive)
                .with("successful_blocks", successes as f64)
                .with("blocks", blocks as f64));
        }
        let mut counts = vec![0u64; k];
        for &x in &samples[..self.psi as usize] {
            counts[x] += 1;
        }
        self.conclude_counts(&counts, successes, blocks)
    }

    fn conclude_counts(&self, counts: &[u64], successes: u64, blocks: u64) -> Result<Verdict> {
        let v = match self.task {
            InferTask::Learn => Verdict::new(Decision::Estimate(learn_from_counts(counts)?)),
            InferTask::Uniformity => {
                let out = centralized_decide(counts, self.eps);
                let v = if out.accept {
                    Verdict::accept()
                } else {
                    Verdict::reject()
                };
                v.with("statistic", out.statistic).with("threshold", out.threshold)
            }
        };
        Ok(v.with("successful_blocks", successes as f64)
            .with("blocks", blocks as f64))
    }
}

#[derive(Clone, Debug)]
pub struct SimulateAndInferPlan {
    pub layout: BatchLayout,
    pub blocks: u64,
    maps: Vec<MessageMap>,
}

impl SimulateAndInferPlan {
    fn block_players(&self) -> u64 {
        BATCHES_PER_BLOCK * self.layout.batch_size()
    }
}

impl SmpProtocol for SimulateAndInfer {
    type Plan = SimulateAndInferPlan;

    fn plan(&self, cfg: &ProtocolConfig, _coins: &mut PublicCoins) -> Result<SimulateAndInferPlan> {
        let layout = BatchLayout::final_scheme(cfg.k, cfg.ell)?;
        let per_block = BATCHES_PER_BLOCK * layout.batch_size();
        let blocks = cfg.n / per_block;
        if blocks == 0 {
            return Err(Error::Undersized {
                needed: per_block,
                got: cfg.n,
            });
        }
        let maps = (0..layout.blocks())
            .map(|b| layout.message_map(b, cfg.ell))
            .collect::<Result<_>>()?;
        Ok(SimulateAndInferPlan {
            layout,
            blocks,
            maps,
        })
    }

    fn players(&self, plan: &SimulateAndInferPlan) -> u64 {
        plan.blocks * plan.block_players()
    }

    fn strategy<'a>(&self, plan: &'a SimulateAndInferPlan, player: u64) -> &'a MessageMap {
        let i = (player % plan.layout.batch_size()) as usize;
        &plan.maps[plan.layout.block_of_player(i)]
    }

    fn referee(
        &self,
        plan: &SimulateAndInferPlan,
        messages: &[u32],
        rng: &mut SimRng,
    ) -> Result<Verdict> {
        let batch = plan.layout.batch_size() as usize;
        let mut samples = Vec::new();
        for block in messages.chunks(plan.block_players() as usize) {
            for m in block.chunks(batch) {
                if let Some((b, r)) = referee_batch(&plan.layout, m, rng) {
                    samples.push(plan.layout.symbol(b, r));
                    break;
                }
            }
        }
        self.conclude(plan.layout.k(), &samples, plan.blocks)
    }
}

impl CountEngine for SimulateAndInfer {
    /// The number of successful blocks is `Binomial(B, 1 − (1 − ρ)³)` and
    /// the declared samples are i.i.d. from `p`, so both are drawn directly.
    fn run_counts(&self, cfg: &ProtocolConfig, p: &Pmf) -> Result<TrialOutcome> {
        let plan = self.plan(cfg, &mut PublicCoins::unavailable())?;
        let rho = plan.layout.rho(p);
        let success = 1.0 - (1.0 - rho).powi(BATCHES_PER_BLOCK as i32);
        let mut nature = Stream::Nature.rng(cfg.master_seed);
        let successes = binomial(plan.blocks, success, &mut nature);
        let verdict = if successes < self.psi {
            Verdict::abort(AbortReason::Inconclusive)
                .with("successful_blocks", successes as f64)
                .with("blocks", plan.blocks as f64)
        } else {
            let counts = multinomial(self.psi, p, &mut nature);
            self.conclude_counts(&counts, successes, plan.blocks)?
        };
        Ok(TrialOutcome {
            verdict,
            players: self.players(&plan),
            public_bits: 0,
        })
    }
}

/// One private-coin execution of simulate-and-infer with `blocks` blocks.
pub fn simulate_and_infer<R: Rng + ?Sized>(
    p: &Pmf,
    ell: u32,
    blocks: u64,
    routine: &SimulateAndInfer,
    rng: &mut R,
) -> Result<Verdict> {
    if blocks == 0 {
        return Err(Error::invalid("at least one block is needed"));
    }
    let n = blocks * SimulateAndInfer::block_players(p.k(), ell)?;
    let cfg = ProtocolConfig::new(p.k(), ell, n, CoinMode::Private, rng.random())?;
    Ok(run_smp(&cfg, routine, p)?.0)
}

/// The one-bit protocol: every player reports whether it saw symbol 0.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlyingPony;

impl FlyingPony {
    /// `⌈c_pony · k⌉`.
    pub fn default_players(k: usize, c: &Constants) -> u64 {
        (c.c_pony * k as f64).ceil() as u64
    }

    /// Accepts iff the count of ones lies in `(n/(2k), 3n/(2k)]`, the
    /// interval of counts closer to bias `1/k` than to 0 or `2/k`.
    pub fn decide(ones: u64, n: u64, k: usize) -> Verdict {
        let lo = 0.5 * n as f64 / k as f64;
        let hi = 1.5 * n as f64 / k as f64;
        let c = ones as f64;
        let v = if c > lo && c <= hi {
            Verdict::accept()
        } else {
            Verdict::reject()
        };
        v.with("ones", c)
    }
}

#[derive(Clone, Debug)]
pub struct FlyingPonyPlan {
    n: u64,
    k: usize,
    map: MessageMap,
}

impl SmpProtocol for FlyingPony {
    type Plan = FlyingPonyPlan;

    fn plan(&self, cfg: &ProtocolConfig, _coins: &mut PublicCoins) -> Result<FlyingPonyPlan> {
        let table = (0..cfg.k).map(|x| (x == 0) as u32).collect();
        Ok(FlyingPonyPlan {
            n: cfg.n,
            k: cfg.k,
            map: MessageMap::deterministic(cfg.ell, table)?,
        })
    }

    fn players(&self, plan: &FlyingPonyPlan) -> u64 {
        plan.n
    }

    fn strategy<'a>(&self, plan: &'a FlyingPonyPlan, _player: u64) -> &'a MessageMap {
        &plan.map
    }

    fn referee(&self, plan: &FlyingPonyPlan, messages: &[u32], _rng: &mut SimRng) -> Result<Verdict> {
        let ones = messages.iter().filter(|&&m| m == 1).count() as u64;
        Ok(FlyingPony::decide(ones, plan.n, plan.k))
    }
}

impl CountEngine for FlyingPony {
    fn run_counts(&self, cfg: &ProtocolConfig, p: &Pmf) -> Result<TrialOutcome> {
        let ones = binomial(cfg.n, p.prob(0), &mut Stream::Nature.rng(cfg.master_seed));
        Ok(TrialOutcome {
            verdict: FlyingPony::decide(ones, cfg.n, cfg.k),
            players: cfg.n,
            public_bits: 0,
        })
    }
}

/// One execution of the one-bit protocol with `n` players.
pub fn flying_pony_protocol<R: Rng + ?Sized>(p: &Pmf, n: u64, rng: &mut R) -> Result<Verdict> {
    let cfg = ProtocolConfig::new(p.k(), 1, n, CoinMode::Private, rng.random())?;
    Ok(run_smp(&cfg, &FlyingPony, p)?.0)
}
