//! The simultaneous message-passing fabric.
//!
//! Each of `n` players holds one i.i.d. sample from the unknown pmf and sends
//! a single ℓ-bit message through its [`MessageMap`]. The referee sees the
//! messages and, in public-coin mode, the shared coins; it never sees the
//! samples or the players' private coins. A protocol is expressed as an
//! [`SmpProtocol`]: a public plan drawn from the shared coins, one channel per
//! player, and a referee over the message vector.

mod coins;
mod engine;
mod message;
mod transcript;
mod verdict;

use serde::{Deserialize, Serialize};

pub use coins::{description_bits, CoinDraw, CoinRecord, PublicCoins};
pub use engine::{execute, CountEngine, Engine, TrialOutcome};
pub use message::{MessageMap, MAX_DENSE_ELL};
pub use transcript::Transcript;
pub use verdict::{AbortReason, Decision, Verdict};

use crate::dist::{Pmf, Sampler};
use crate::error::{Error, Result};
use crate::seed::{SimRng, Stream};

/// Hard cap on the players a Las Vegas driver may consume for one output.
pub const PLAYER_CAP: u64 = 1_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoinMode {
    Private,
    Public,
    /// Coins shared between pairs of players; recognized but not supported.
    Pairwise,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub k: usize,
    pub ell: u32,
    pub n: u64,
    pub coin_mode: CoinMode,
    pub master_seed: u64,
}

impl ProtocolConfig {
    pub fn new(k: usize, ell: u32, n: u64, coin_mode: CoinMode, master_seed: u64) -> Result<Self> {
        let cfg = ProtocolConfig {
            k,
            ell,
            n,
            coin_mode,
            master_seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        if self.ell == 0 || self.ell > 31 {
            return Err(Error::invalid(format!("ell = {} must lie in [1, 31]", self.ell)));
        }
        if self.n == 0 {
            return Err(Error::invalid("n must be at least 1"));
        }
        if self.coin_mode == CoinMode::Pairwise {
            return Err(Error::Unsupported(
                "pairwise coins are not implemented; use private or public coins".into(),
            ));
        }
        Ok(())
    }

    /// True when one message can carry a whole sample, so the distributed
    /// and centralized settings coincide.
    pub fn is_centralized(&self) -> bool {
        (self.k as u64) <= 1u64 << self.ell
    }

    /// Number of distinct messages, `2^ℓ`.
    pub fn alphabet(&self) -> u64 {
        1u64 << self.ell
    }
}

/// A protocol in the SMP model.
pub trait SmpProtocol {
    /// Everything the players and the referee derive from the shared coins
    /// and the configuration.
    type Plan;

    /// Builds the plan. In private-coin mode the coins are unavailable and any
    /// draw fails.
    fn plan(&self, cfg: &ProtocolConfig, coins: &mut PublicCoins) -> Result<Self::Plan>;

    /// Number of players the plan uses.
    fn players(&self, plan: &Self::Plan) -> u64;

    /// The channel of one player.
    fn strategy<'a>(&self, plan: &'a Self::Plan, player: u64) -> &'a MessageMap;

    /// The decision, as a function of the plan, the messages and the
    /// referee's own coins only.
    fn referee(&self, plan: &Self::Plan, messages: &[u32], rng: &mut SimRng) -> Result<Verdict>;
}

/// The private coin stream of one player.
pub fn derive_private_coins(master_seed: u64, player: u64, nonce: u64) -> SimRng {
    Stream::Private { player, nonce }.rng(master_seed)
}

pub(crate) fn public_coins_for(cfg: &ProtocolConfig, seed: u64) -> PublicCoins {
    match cfg.coin_mode {
        CoinMode::Public => PublicCoins::new(seed),
        _ => PublicCoins::unavailable(),
    }
}

/// Runs one execution of `protocol` with players sampling from `p`.
pub fn run_smp<P: SmpProtocol>(
    cfg: &ProtocolConfig,
    protocol: &P,
    p: &Pmf,
) -> Result<(Verdict, Transcript)> {
    cfg.validate()?;
    if p.k() != cfg.k {
        return Err(Error::invalid(format!(
            "pmf has k = {} but the protocol is configured for k = {}",
            p.k(),
            cfg.k
        )));
    }
    let mut coins = public_coins_for(cfg, Stream::Public.seed(cfg.master_seed));
    let plan = protocol.plan(cfg, &mut coins)?;
    let n = protocol.players(&plan);
    if n > cfg.n {
        return Err(Error::Undersized { needed: n, got: cfg.n });
    }
    let sampler = Sampler::new(p);
    let mut nature = Stream::Nature.rng(cfg.master_seed);
    let mut messages = Vec::with_capacity(n as usize);
    for player in 0..n {
        let x = sampler.sample(&mut nature);
        let map = protocol.strategy(&plan, player);
        if map.k() != cfg.k {
            return Err(Error::invalid(format!(
                "player {player} has a channel over {} symbols, expected {}",
                map.k(),
                cfg.k
            )));
        }
        let m = match map.fixed(x) {
            Some(m) => m,
            None => map.emit(x, &mut derive_private_coins(cfg.master_seed, player, 0)),
        };
        if !message::fits(m, cfg.ell) {
            return Err(Error::ProtocolViolation {
                player,
                message: m,
                ell: cfg.ell,
            });
        }
        messages.push(m);
    }
    let verdict = protocol.referee(&plan, &messages, &mut Stream::Referee.rng(cfg.master_seed))?;
    let transcript = Transcript {
        ell: cfg.ell,
        messages,
        public_coins: coins.into_record(),
        samples_consumed: n,
    };
    Ok((verdict, transcript))
}

/// Recomputes the referee's verdict from a transcript alone.
pub fn replay<P: SmpProtocol>(
    cfg: &ProtocolConfig,
    protocol: &P,
    transcript: &Transcript,
) -> Result<Verdict> {
    cfg.validate()?;
    let mut coins = match transcript.public_coins.seed {
        Some(seed) => public_coins_for(cfg, seed),
        None => PublicCoins::unavailable(),
    };
    let plan = protocol.plan(cfg, &mut coins)?;
    if coins.record() != &transcript.public_coins {
        return Err(Error::invalid("public coin log does not match the transcript"));
    }
    protocol.referee(&plan, &transcript.messages, &mut Stream::Referee.rng(cfg.master_seed))
}

/// A lazy, capped sequence of players, each holding a fresh sample.
#[derive(Debug)]
pub struct PlayerStream<'a> {
    sampler: &'a Sampler,
    nature: SimRng,
    next: u64,
    cap: u64,
}

impl<'a> PlayerStream<'a> {
    pub fn new(sampler: &'a Sampler, nature: SimRng, cap: u64) -> Self {
        PlayerStream {
            sampler,
            nature,
            next: 0,
            cap,
        }
    }

    /// The next player's index and sample, or [`Error::PlayerCap`] once the cap is reached.
    pub fn next_player(&mut self) -> Result<(u64, usize)> {
        if self.next >= self.cap {
            return Err(Error::PlayerCap { cap: self.cap });
        }
        let i = self.next;
        self.next += 1;
        Ok((i, self.sampler.sample(&mut self.nature)))
    }

    /// Whether `count` more players fit under the cap.
    pub fn has_room(&self, count: u64) -> bool {
        self.next + count <= self.cap
    }

    pub fn consumed(&self) -> u64 {
        self.next
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::uniform;
    use crate::testers::centralized_uniformity_test;

    /// Every player forwards its sample; the referee runs the centralized tester.
    struct Forward {
        eps: f64,
    }

    impl SmpProtocol for Forward {
        type Plan = MessageMap;

        fn plan(&self, cfg: &ProtocolConfig, _coins: &mut PublicCoins) -> Result<MessageMap> {
            MessageMap::identity(cfg.k, cfg.ell)
        }

        fn players(&self, _plan: &MessageMap) -> u64 {
            u64::MAX
        }

        fn strategy<'a>(&self, plan: &'a MessageMap, _player: u64) -> &'a MessageMap {
            plan
        }

        fn referee(&self, plan: &MessageMap, messages: &[u32], _rng: &mut SimRng) -> Result<Verdict> {
            let samples: Vec<usize> = messages.iter().map(|&m| m as usize).collect();
            centralized_uniformity_test(&samples, plan.k(), self.eps)
        }
    }

    struct Fixed {
        map: MessageMap,
        n: u64,
        public_draw: bool,
    }

    impl SmpProtocol for Fixed {
        type Plan = MessageMap;

        fn plan(&self, _cfg: &ProtocolConfig, coins: &mut PublicCoins) -> Result<MessageMap> {
            if self.public_draw {
                coins.draw("shared bit", 1.0, |_| Ok(()))?;
            }
            Ok(self.map.clone())
        }

        fn players(&self, _plan: &MessageMap) -> u64 {
            self.n
        }

        fn strategy<'a>(&self, plan: &'a MessageMap, _player: u64) -> &'a MessageMap {
            plan
        }

        fn referee(&self, _plan: &MessageMap, messages: &[u32], _rng: &mut SimRng) -> Result<Verdict> {
            Ok(Verdict::accept().with("ones", messages.iter().filter(|&&m| m == 1).count() as f64))
        }
    }

    #[test]
    fn forwarding_reproduces_centralized_verdict() {
        let k = 16;
        let p = uniform(k).unwrap();
        let n = crate::testers::centralized_n_req(k, 0.5) as u64;
        for seed in 0..5 {
            let cfg = ProtocolConfig::new(k, 4, n, CoinMode::Private, seed).unwrap();
            assert!(cfg.is_centralized());
            let fwd = Forward { eps: 0.5 };
            let (verdict, transcript) = run_smp(&cfg, &FixedN(fwd, n), &p).unwrap();
            let sampler = Sampler::new(&p);
            let mut nature = Stream::Nature.rng(seed);
            let samples: Vec<usize> = (0..n).map(|_| sampler.sample(&mut nature)).collect();
            assert_eq!(
                transcript.messages,
                samples.iter().map(|&x| x as u32).collect::<Vec<_>>()
            );
            assert_eq!(verdict, centralized_uniformity_test(&samples, k, 0.5).unwrap());
        }
    }

    /// Caps a protocol at `n` players.
    struct FixedN<P>(P, u64);

    impl<P: SmpProtocol> SmpProtocol for FixedN<P> {
        type Plan = P::Plan;
        fn plan(&self, cfg: &ProtocolConfig, coins: &mut PublicCoins) -> Result<P::Plan> {
            self.0.plan(cfg, coins)
        }
        fn players(&self, _plan: &P::Plan) -> u64 {
            self.1
        }
        fn strategy<'a>(&self, plan: &'a P::Plan, player: u64) -> &'a MessageMap {
            self.0.strategy(plan, player)
        }
        fn referee(&self, plan: &P::Plan, messages: &[u32], rng: &mut SimRng) -> Result<Verdict> {
            self.0.referee(plan, messages, rng)
        }
    }

    #[test]
    fn single_player_bit() {
        let p = Pmf::new(vec![0.3, 0.7]).unwrap();
        let proto = Fixed {
            map: MessageMap::identity(2, 1).unwrap(),
            n: 1,
            public_draw: false,
        };
        let mut ones = 0;
        for seed in 0..2000 {
            let cfg = ProtocolConfig::new(2, 1, 1, CoinMode::Private, seed).unwrap();
            let (_, t) = run_smp(&cfg, &proto, &p).unwrap();
            assert_eq!(t.messages.len(), 1);
            assert!(t.messages[0] <= 1);
            ones += t.messages[0];
        }
        let freq = ones as f64 / 2000.0;
        assert!((freq - 0.7).abs() < 0.04, "freq = {freq}");
    }

    #[test]
    fn runs_are_byte_identical() {
        let p = uniform(8).unwrap();
        let proto = Fixed {
            map: MessageMap::randomized(2, vec![vec![0.25; 4]; 8]).unwrap(),
            n: 50,
            public_draw: true,
        };
        let cfg = ProtocolConfig::new(8, 2, 50, CoinMode::Public, 99).unwrap();
        let a = run_smp(&cfg, &proto, &p).unwrap();
        let b = run_smp(&cfg, &proto, &p).unwrap();
        assert_eq!(a.1.to_json_line(), b.1.to_json_line());
        assert_eq!(a.0, b.0);
        assert_eq!(a.1.public_coins.bits(), 1);
        let back = Transcript::from_json_line(&a.1.to_json_line()).unwrap();
        assert_eq!(back, a.1);
        assert_eq!(replay(&cfg, &proto, &back).unwrap(), a.0);
    }

    #[test]
    fn oversized_message_is_a_violation() {
        let p = uniform(4).unwrap();
        let proto = Fixed {
            map: MessageMap::deterministic(2, vec![0, 1, 2, 3]).unwrap(),
            n: 10,
            public_draw: false,
        };
        let cfg = ProtocolConfig::new(4, 1, 10, CoinMode::Private, 3).unwrap();
        assert!(matches!(
            run_smp(&cfg, &proto, &p),
            Err(Error::ProtocolViolation { ell: 1, .. })
        ));
    }

    #[test]
    fn coin_modes() {
        assert!(matches!(
            ProtocolConfig::new(4, 1, 1, CoinMode::Pairwise, 0),
            Err(Error::Unsupported(_))
        ));
        let proto = Fixed {
            map: MessageMap::identity(2, 1).unwrap(),
            n: 1,
            public_draw: true,
        };
        let cfg = ProtocolConfig::new(2, 1, 1, CoinMode::Private, 0).unwrap();
        assert!(matches!(
            run_smp(&cfg, &proto, &uniform(2).unwrap()),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn player_stream_cap() {
        let p = uniform(3).unwrap();
        let s = Sampler::new(&p);
        let mut stream = PlayerStream::new(&s, Stream::Nature.rng(0), 2);
        assert!(stream.next_player().is_ok());
        assert!(stream.has_room(1));
        assert!(stream.next_player().is_ok());
        assert!(!stream.has_room(1));
        assert_eq!(stream.next_player(), Err(Error::PlayerCap { cap: 2 }));
    }
}
