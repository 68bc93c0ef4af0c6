//! Runs one trial of any protocol the harness knows about.

use crate::constants::Constants;
use crate::dist::{multinomial, tv, Pmf, Sampler};
use crate::error::{Error, Result};
use crate::identity::{reduced_eps, IdentityViaUniformity, STRETCH};
use crate::infer::{FlyingPony, SimulateAndInfer};
use crate::public_uniformity::{LevinProtocol, LevinSchedule, SmoothProtocol, SmoothSchedule, WarmupProtocol, WarmupSchedule};
use crate::seed::Stream;
use crate::simulate::{simulate_with_layout, BatchLayout};
use crate::smp::{
    execute, AbortReason, CoinMode, CountEngine, Decision, Engine, ProtocolConfig, Verdict, PLAYER_CAP,
};
use crate::testers::{centralized_decide, centralized_params, histogram};

use super::config::ProtocolId;

/// Player count at which the dummy control starts answering correctly.
pub const DUMMY_THRESHOLD: u64 = 1000;

/// Everything about a trial except the instance and the seed.
#[derive(Clone, Debug)]
pub struct TrialSetup<'a> {
    pub protocol: ProtocolId,
    pub k: usize,
    pub ell: u32,
    pub eps: f64,
    /// `None` uses [`auto_players`].
    pub n: Option<u64>,
    pub constants: &'a Constants,
    pub engine: Engine,
    /// Reference pmf for identity testing.
    pub reference: Option<&'a Pmf>,
    /// Inner uniformity protocol for identity testing.
    pub inner: ProtocolId,
}

/// What one trial produced.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialResult {
    pub verdict: Verdict,
    pub n: u64,
    pub players: u64,
    pub public_bits: u64,
    /// Distance from a learned estimate to the instance.
    pub tv: Option<f64>,
}

impl TrialResult {
    pub fn symbol(&self) -> Option<usize> {
        match self.verdict.decision {
            Decision::Symbol(x) => Some(x),
            _ => None,
        }
    }
}

/// The player count a protocol asks for at the given constants.
pub fn auto_players(
    protocol: ProtocolId,
    k: usize,
    ell: u32,
    eps: f64,
    c: &Constants,
    inner: ProtocolId,
) -> Result<u64> {
    Ok(match protocol {
        ProtocolId::Simulate => PLAYER_CAP,
        ProtocolId::Smooth => SmoothSchedule::min_players(k, ell, eps, c)?,
        ProtocolId::Levin => LevinSchedule::nominal_players(k, ell, eps, c)?.ceil() as u64,
        ProtocolId::Warmup => WarmupSchedule::min_players(k, eps, c)?,
        ProtocolId::PrivateSi => SimulateAndInfer::uniformity(k, eps, c)?.default_players(k, ell)?,
        ProtocolId::SiLearn => SimulateAndInfer::learn(k, eps, c)?.default_players(k, ell)?,
        ProtocolId::FlyingPony => FlyingPony::default_players(k, c),
        ProtocolId::Centralized => centralized_params(k, eps)?.n_req(c.c_l2),
        ProtocolId::Identity => {
            auto_players(inner, STRETCH * k, ell, reduced_eps(eps), c, ProtocolId::Smooth)?
        }
        ProtocolId::Dummy => DUMMY_THRESHOLD,
    })
}

fn coin_mode(protocol: ProtocolId) -> CoinMode {
    if protocol.uses_public_coins() {
        CoinMode::Public
    } else {
        CoinMode::Private
    }
}

fn run<P: CountEngine>(protocol: &P, cfg: &ProtocolConfig, p: &Pmf, engine: Engine, n: u64) -> Result<TrialResult> {
    let out = execute(cfg, protocol, p, engine)?;
    Ok(TrialResult {
        verdict: out.verdict,
        n,
        players: out.players,
        public_bits: out.public_bits,
        tv: None,
    })
}

/// Runs one trial on instance `p`; all randomness derives from `seed`.
///
/// `expect_accept` only matters for the dummy control, which answers
/// correctly exactly when it has at least [`DUMMY_THRESHOLD`] players.
pub fn run_trial(setup: &TrialSetup<'_>, p: &Pmf, seed: u64, expect_accept: bool) -> Result<TrialResult> {
    let TrialSetup {
        protocol,
        k,
        ell,
        eps,
        constants: c,
        engine,
        ..
    } = *setup;
    let n = match setup.n {
        Some(n) => n,
        None => auto_players(protocol, k, ell, eps, c, setup.inner)?,
    };
    if p.k() != k {
        return Err(Error::invalid(format!("instance has {} symbols, cell has k = {k}", p.k())));
    }
    let cfg = ProtocolConfig::new(k, ell, n, coin_mode(protocol), seed)?;
    match protocol {
        ProtocolId::Simulate => {
            let layout = BatchLayout::final_scheme(k, ell)?;
            let mut rng = Stream::Nature.rng(seed);
            let (verdict, players) = match simulate_with_layout(&layout, &Sampler::new(p), &mut rng, n) {
                Ok(out) => (Verdict::new(Decision::Symbol(out.symbol)), out.players_used),
                Err(Error::PlayerCap { .. }) => (Verdict::abort(AbortReason::PlayerCap), n),
                Err(e) => return Err(e),
            };
            Ok(TrialResult {
                verdict,
                n,
                players,
                public_bits: 0,
                tv: None,
            })
        }
        ProtocolId::Smooth => run(&SmoothProtocol::new(eps, c.clone()), &cfg, p, engine, n),
        ProtocolId::Levin => run(&LevinProtocol::new(eps, c.clone()), &cfg, p, engine, n),
        ProtocolId::Warmup => run(&WarmupProtocol::new(eps, c.clone()), &cfg, p, engine, n),
        ProtocolId::PrivateSi => run(&SimulateAndInfer::uniformity(k, eps, c)?, &cfg, p, engine, n),
        ProtocolId::SiLearn => {
            let mut out = run(&SimulateAndInfer::learn(k, eps, c)?, &cfg, p, engine, n)?;
            if let Decision::Estimate(est) = &out.verdict.decision {
                out.tv = Some(tv(est, p)?);
            }
            Ok(out)
        }
        ProtocolId::FlyingPony => run(&FlyingPony, &cfg, p, engine, n),
        ProtocolId::Centralized => {
            let mut nature = Stream::Nature.rng(seed);
            let counts = match engine {
                Engine::Counts => multinomial(n, p, &mut nature),
                Engine::Fabric => {
                    let sampler = Sampler::new(p);
                    let xs: Vec<usize> = (0..n).map(|_| sampler.sample(&mut nature)).collect();
                    histogram(&xs, k)?
                }
            };
            let out = centralized_decide(&counts, eps);
            let verdict = if out.accept { Verdict::accept() } else { Verdict::reject() };
            Ok(TrialResult {
                verdict: verdict.with("statistic", out.statistic).with("threshold", out.threshold),
                n,
                players: n,
                public_bits: 0,
                tv: None,
            })
        }
        ProtocolId::Identity => {
            let q = setup
                .reference
                .ok_or_else(|| Error::config("reference", "identity testing needs a reference pmf"))?;
            let e = reduced_eps(eps);
            let cfg = ProtocolConfig {
                coin_mode: coin_mode(setup.inner),
                ..cfg
            };
            match setup.inner {
                ProtocolId::Smooth => run(&IdentityViaUniformity::new(q, SmoothProtocol::new(e, c.clone())), &cfg, p, engine, n),
                ProtocolId::Levin => run(&IdentityViaUniformity::new(q, LevinProtocol::new(e, c.clone())), &cfg, p, engine, n),
                ProtocolId::Warmup => run(&IdentityViaUniformity::new(q, WarmupProtocol::new(e, c.clone())), &cfg, p, engine, n),
                ProtocolId::PrivateSi => {
                    let inner = SimulateAndInfer::uniformity(STRETCH * k, e, c)?;
                    run(&IdentityViaUniformity::new(q, inner), &cfg, p, engine, n)
                }
                other => Err(Error::config("inner", format!("`{}` is not a uniformity protocol", other.name()))),
            }
        }
        ProtocolId::Dummy => {
            let correct = n >= DUMMY_THRESHOLD;
            let verdict = if correct == expect_accept { Verdict::accept() } else { Verdict::reject() };
            Ok(TrialResult {
                verdict,
                n,
                players: n,
                public_bits: 0,
                tv: None,
            })
        }
    }
}

/// Whether a trial counts as a success.
///
/// Simulation succeeds when a symbol is declared, learning when the estimate
/// is within `ε` in total variation, and testing when the verdict matches
/// the expected one. Aborts are failures.
pub fn trial_success(protocol: ProtocolId, result: &TrialResult, eps: f64, expect_accept: bool) -> bool {
    match protocol {
        ProtocolId::Simulate => result.symbol().is_some(),
        ProtocolId::SiLearn => result.tv.is_some_and(|d| d <= eps),
        _ => {
            if expect_accept {
                result.verdict.is_accept()
            } else {
                result.verdict.is_reject()
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::{paninski, uniform, PaninskiParam};

    fn setup(protocol: ProtocolId, k: usize, c: &Constants) -> TrialSetup<'_> {
        TrialSetup {
            protocol,
            k,
            ell: 1,
            eps: 0.5,
            n: None,
            constants: c,
            engine: Engine::Counts,
            reference: None,
            inner: ProtocolId::Smooth,
        }
    }

    #[test]
    fn dummy_flips_at_threshold() {
        let c = Constants::default();
        let u = uniform(4).unwrap();
        let mut s = setup(ProtocolId::Dummy, 4, &c);
        for (n, expect, accept) in [(999, true, false), (1000, true, true), (5, false, true), (2000, false, false)] {
            s.n = Some(n);
            let r = run_trial(&s, &u, 0, expect).unwrap();
            assert_eq!(r.verdict.is_accept(), accept);
            assert_eq!(trial_success(ProtocolId::Dummy, &r, 0.5, expect), n >= 1000);
        }
    }

    #[test]
    fn auto_players_are_enough_to_run() {
        let c = Constants::default();
        let u = uniform(8).unwrap();
        for protocol in [
            ProtocolId::Smooth,
            ProtocolId::Levin,
            ProtocolId::Warmup,
            ProtocolId::PrivateSi,
            ProtocolId::SiLearn,
            ProtocolId::FlyingPony,
            ProtocolId::Centralized,
            ProtocolId::Simulate,
        ] {
            let r = run_trial(&setup(protocol, 8, &c), &u, 3, true).unwrap();
            assert!(r.players <= r.n, "{protocol:?}");
        }
    }

    #[test]
    fn too_few_players_is_reported() {
        let c = Constants::default();
        let mut s = setup(ProtocolId::Smooth, 8, &c);
        s.n = Some(10);
        let err = run_trial(&s, &uniform(8).unwrap(), 0, true).unwrap_err();
        assert!(matches!(err, Error::Undersized { .. }));
    }

    #[test]
    fn identity_runs_both_engines() {
        let c = Constants::default();
        let q = Pmf::new(vec![0.4, 0.2, 0.2, 0.2]).unwrap();
        let far = paninski(&PaninskiParam::new(4, 0.5, vec![1, 1]).unwrap()).unwrap();
        for engine in [Engine::Counts, Engine::Fabric] {
            let s = TrialSetup {
                engine,
                reference: Some(&q),
                ell: 2,
                ..setup(ProtocolId::Identity, 4, &c)
            };
            let a = run_trial(&s, &q, 11, true).unwrap();
            let b = run_trial(&s, &q, 11, true).unwrap();
            assert_eq!(a, b);
            assert!(run_trial(&s, &far, 11, false).is_ok());
        }
    }
}
