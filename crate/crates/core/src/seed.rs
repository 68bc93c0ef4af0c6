//! Deterministic derivation of independent random streams from one master seed.
//!
//! Every stream is a [`ChaCha8Rng`] keyed by a 64-bit value obtained by
//! folding tags into the master seed with the SplitMix64 finalizer. Distinct
//! tag tuples give unrelated keys, so streams never overlap in practice.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The random generator used everywhere in the crate.
pub type SimRng = ChaCha8Rng;

const NATURE: u64 = 0x6e61_7475_7265;
const PUBLIC: u64 = 0x7075_626c_6963;
const PRIVATE: u64 = 0x7072_6976_6174;
const REFEREE: u64 = 0x7265_6665_7265;
const TRIAL: u64 = 0x7472_6961_6c00;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds a sequence of tags into a single 64-bit seed.
pub fn derive(master: u64, tags: &[u64]) -> u64 {
    tags.iter().fold(mix64(master), |acc, &t| mix64(acc ^ mix64(t)))
}

/// Which party a random stream belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    /// Draws of the players' samples from the unknown distribution.
    Nature,
    /// The shared public coins.
    Public,
    /// The private coins of one player; `nonce` separates independent uses.
    Private { player: u64, nonce: u64 },
    /// The referee's own coins.
    Referee,
}

impl Stream {
    pub fn seed(self, master: u64) -> u64 {
        match self {
            Stream::Nature => derive(master, &[NATURE]),
            Stream::Public => derive(master, &[PUBLIC]),
            Stream::Private { player, nonce } => derive(master, &[PRIVATE, player, nonce]),
            Stream::Referee => derive(master, &[REFEREE]),
        }
    }

    pub fn rng(self, master: u64) -> SimRng {
        SimRng::seed_from_u64(self.seed(master))
    }
}

/// Seed of one trial of one experiment cell.
pub fn trial_seed(master: u64, cell: u64, trial: u64) -> u64 {
    derive(master, &[TRIAL, cell, trial])
}

pub fn rng_from_seed(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_reproducible() {
        let a: Vec<u64> = Stream::Private { player: 3, nonce: 0 }
            .rng(42)
            .random_iter()
            .take(8)
            .collect();
        let b: Vec<u64> = Stream::Private { player: 3, nonce: 0 }
            .rng(42)
            .random_iter()
            .take(8)
            .collect();
        assert_eq!(a, b);
    }

    #[test]
    fn streams_are_distinct() {
        let seeds = [
            Stream::Nature.seed(1),
            Stream::Public.seed(1),
            Stream::Referee.seed(1),
            Stream::Private { player: 0, nonce: 0 }.seed(1),
            Stream::Private { player: 1, nonce: 0 }.seed(1),
            Stream::Private { player: 0, nonce: 1 }.seed(1),
            Stream::Nature.seed(2),
        ];
        for i in 0..seeds.len() {
            for j in 0..i {
                assert_ne!(seeds[i], seeds[j]);
            }
        }
        assert_ne!(trial_seed(1, 0, 1), trial_seed(1, 1, 0));
    }

    fn correlation(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn neighbouring_players_uncorrelated() {
        let draw = |player, nonce| -> Vec<f64> {
            Stream::Private { player, nonce }
                .rng(7)
                .random_iter()
                .take(100_000)
                .collect()
        };
        let a = draw(1, 0);
        assert!(correlation(&a, &draw(2, 0)).abs() < 0.01);
        assert!(correlation(&a, &draw(1, 1)).abs() < 0.01);
    }
}
