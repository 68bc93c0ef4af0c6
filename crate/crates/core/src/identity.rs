//! Identity testing by reduction to uniformity testing.
//!
//! The map `F_q` sends a sample of `p` over `[k]` to a sample over
//! `[5k]`. Symbol `x` owns `a_x = ⌊5k·q_x⌋` buckets; the remaining
//! `5k − Σ a_x` slack buckets absorb the rounding. On input `x` the map
//! outputs a uniform bucket of `x` with probability `a_x / (5k·q_x)` and a
//! uniform slack bucket otherwise. Every bucket then has probability exactly
//! `1/(5k)` under `p = q`, while a `p` far from `q` stays far from uniform.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dist::Pmf;
use crate::error::{Error, Result};
use crate::seed::SimRng;
use crate::smp::{
    CountEngine, MessageMap, ProtocolConfig, PublicCoins, SmpProtocol, TrialOutcome, Verdict,
    MAX_DENSE_ELL,
};

/// Buckets per input symbol.
pub const STRETCH: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoldreichMap {
    q: Pmf,
    alloc: Vec<usize>,
    /// First bucket of each symbol's range; the slack range follows the last symbol.
    offsets: Vec<usize>,
    slack: usize,
}

impl GoldreichMap {
    pub fn build(q: &Pmf) -> Self {
        let m = STRETCH * q.k();
        let alloc: Vec<usize> = q
            .probs()
            .iter()
            // The small guard keeps exact multiples of 1/m from rounding down.
            .map(|&v| ((m as f64 * v) + 1e-9).floor() as usize)
            .collect();
        let mut offsets = Vec::with_capacity(alloc.len());
        let mut next = 0;
        for &a in &alloc {
            offsets.push(next);
            next += a;
        }
        GoldreichMap {
            q: q.clone(),
            alloc,
            offsets,
            slack: m - next,
        }
    }

    pub fn q(&self) -> &Pmf {
        &self.q
    }

    pub fn k(&self) -> usize {
        self.q.k()
    }

    /// Size of the output alphabet, `5k`.
    pub fn m(&self) -> usize {
        STRETCH * self.q.k()
    }

    pub fn alloc(&self) -> &[usize] {
        &self.alloc
    }

    pub fn slack(&self) -> usize {
        self.slack
    }

    fn slack_start(&self) -> usize {
        self.m() - self.slack
    }

    /// Probability that input `x` lands in its own buckets.
    fn keep(&self, x: usize) -> f64 {
        let qx = self.q.prob(x);
        if qx == 0.0 {
            0.0
        } else {
            let keep = self.alloc[x] as f64 / (self.m() as f64 * qx);
            // Masses that are multiples of 1/m up to rounding keep everything.
            if keep > 1.0 - 1e-9 {
                1.0
            } else {
                keep
            }
        }
    }

    fn check_input(&self, x: usize) -> Result<()> {
        if x >= self.k() {
            return Err(Error::invalid(format!("symbol {x} outside [0, {})", self.k())));
        }
        if self.keep(x) < 1.0 && self.slack == 0 {
            return Err(Error::domain(format!(
                "symbol {x} must go to a slack bucket but the map has none"
            )));
        }
        Ok(())
    }

    /// The law of `F_q(x)` over `[5k]`.
    pub fn row(&self, x: usize) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut row = vec![0.0; self.m()];
        let keep = self.keep(x);
        if self.alloc[x] > 0 {
            let w = keep / self.alloc[x] as f64;
            row[self.offsets[x]..self.offsets[x] + self.alloc[x]].fill(w);
        }
        if keep < 1.0 {
            let w = (1.0 - keep) / self.slack as f64;
            let start = self.slack_start();
            row[start..].iter_mut().for_each(|v| *v += w);
        }
        Ok(row)
    }

    pub fn map_sample<R: Rng + ?Sized>(&self, x: usize, rng: &mut R) -> Result<usize> {
        self.check_input(x)?;
        if self.alloc[x] > 0 && rng.random::<f64>() < self.keep(x) {
            Ok(self.offsets[x] + rng.random_range(0..self.alloc[x]))
        } else {
            Ok(self.slack_start() + rng.random_range(0..self.slack))
        }
    }

    /// The exact pmf of `F_q(X)` for `X ~ p`.
    pub fn pushforward(&self, p: &Pmf) -> Result<Pmf> {
        if p.k() != self.k() {
            return Err(Error::invalid(format!(
                "pmf over {} symbols, map over {}",
                p.k(),
                self.k()
            )));
        }
        let mut out = vec![0.0; self.m()];
        for x in p.support() {
            for (o, r) in out.iter_mut().zip(self.row(x)?) {
                *o += p.prob(x) * r;
            }
        }
        Pmf::from_weights(&out)
    }
}

pub fn build_map(q: &Pmf) -> GoldreichMap {
    GoldreichMap::build(q)
}

/// The uniformity parameter used after the map: `16ε/25`.
pub fn reduced_eps(eps: f64) -> f64 {
    16.0 * eps / 25.0
}

/// Runs a uniformity protocol over `[5k]` on mapped samples.
///
/// Each player's channel is the composition of `F_q`, realized with the
/// player's private coins, and the inner protocol's channel over `[5k]`.
#[derive(Clone, Debug)]
pub struct IdentityViaUniformity<P> {
    pub map: GoldreichMap,
    pub inner: P,
}

pub struct IdentityPlan<T> {
    inner: T,
    /// Composed channel for each distinct inner channel, keyed by its address.
    composed: Vec<(*const MessageMap, MessageMap)>,
    players: u64,
}

impl<P> IdentityViaUniformity<P> {
    pub fn new(q: &Pmf, inner: P) -> Self {
        IdentityViaUniformity {
            map: GoldreichMap::build(q),
            inner,
        }
    }

    fn inner_cfg(&self, cfg: &ProtocolConfig) -> Result<ProtocolConfig> {
        if cfg.k != self.map.k() {
            return Err(Error::invalid(format!(
                "configured k = {} but q has {} symbols",
                cfg.k,
                self.map.k()
            )));
        }
        Ok(ProtocolConfig {
            k: self.map.m(),
            ..cfg.clone()
        })
    }

    fn compose(&self, w: &MessageMap) -> Result<MessageMap> {
        let ell = w.ell();
        if ell > MAX_DENSE_ELL {
            return Err(Error::Unsupported(format!(
                "composed channels need ell <= {MAX_DENSE_ELL}"
            )));
        }
        let width = 1usize << ell;
        let rows = (0..self.map.k())
            .map(|x| {
                let mut out = vec![0.0; width];
                // Symbols that cannot be mapped never occur when the map is valid for p.
                if let Ok(row) = self.map.row(x) {
                    for (b, pb) in row.into_iter().enumerate().filter(|(_, v)| *v > 0.0) {
                        for (m, o) in out.iter_mut().enumerate() {
                            *o += pb * w.prob(m as u32, b);
                        }
                    }
                } else {
                    out[0] = 1.0;
                }
                out
            })
            .collect();
        MessageMap::randomized(ell, rows)
    }
}

impl<P: SmpProtocol> SmpProtocol for IdentityViaUniformity<P> {
    type Plan = IdentityPlan<P::Plan>;

    fn plan(&self, cfg: &ProtocolConfig, coins: &mut PublicCoins) -> Result<Self::Plan> {
        let inner_cfg = self.inner_cfg(cfg)?;
        let inner = self.inner.plan(&inner_cfg, coins)?;
        let players = self.inner.players(&inner);
        let mut composed: Vec<(*const MessageMap, MessageMap)> = Vec::new();
        for player in 0..players {
            let w = self.inner.strategy(&inner, player);
            let key = w as *const MessageMap;
            if composed.last().map(|(k, _)| *k) != Some(key)
                && !composed.iter().any(|(k, _)| *k == key)
            {
                composed.push((key, self.compose(w)?));
            }
        }
        Ok(IdentityPlan {
            inner,
            composed,
            players,
        })
    }

    fn players(&self, plan: &Self::Plan) -> u64 {
        plan.players
    }

    fn strategy<'a>(&self, plan: &'a Self::Plan, player: u64) -> &'a MessageMap {
        let key = self.inner.strategy(&plan.inner, player) as *const MessageMap;
        let i = plan
            .composed
            .iter()
            .position(|(k, _)| *k == key)
            .expect("every inner channel was composed when planning");
        &plan.composed[i].1
    }

    fn referee(&self, plan: &Self::Plan, messages: &[u32], rng: &mut SimRng) -> Result<Verdict> {
        self.inner.referee(&plan.inner, messages, rng)
    }
}

impl<P: CountEngine> CountEngine for IdentityViaUniformity<P> {
    fn run_counts(&self, cfg: &ProtocolConfig, p: &Pmf) -> Result<TrialOutcome> {
        let mapped = self.map.pushforward(p)?;
        self.inner.run_counts(&self.inner_cfg(cfg)?, &mapped)
    }
}

/// One execution of the identity test with a uniformity protocol built by
/// `make_inner` at parameter `16ε/25`.
pub fn identity_test_via_uniformity<P, F>(
    p: &Pmf,
    q: &Pmf,
    cfg: &ProtocolConfig,
    eps: f64,
    make_inner: F,
    engine: crate::smp::Engine,
) -> Result<TrialOutcome>
where
    P: CountEngine,
    F: FnOnce(f64) -> P,
{
    let test = IdentityViaUniformity::new(q, make_inner(reduced_eps(eps)));
    crate::smp::execute(cfg, &test, p, engine)
}
