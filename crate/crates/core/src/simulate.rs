//! Distributed simulation of one sample from the unknown pmf with ℓ-bit
//! players and private coins.
//!
//! A batch assigns the alphabet to blocks of at most `s = 2^ℓ − 1` symbols.
//! Each block has two players, a declarer and a checker; each sends the
//! 1-based rank of its sample inside the block, or 0 when the sample is
//! elsewhere. The referee declares the symbol reported by the unique declarer
//! with a nonzero message, provided that declarer's checker sent 0. The
//! declared symbol is then distributed exactly as the pmf the players sample
//! from, and a batch succeeds with probability `Π_b (1 − q(B_b))`.
//!
//! The final scheme runs this on the duplicated pmf `q` over `2k` symbols,
//! where each symbol `x` splits into two copies of mass `p_x / 2`. Players
//! still observe samples from `p`: a player whose block holds a copy of its
//! sample reports it, and the referee independently turns every nonzero
//! message into 0 with probability 1/2, which turns the message into one
//! drawn under `q`. The two copies of a symbol are always placed in different
//! blocks, so every block has `q`-mass at most 1/2.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dist::{Partition, Pmf, Sampler};
use crate::error::{Error, Result};
use crate::smp::{MessageMap, PlayerStream, PLAYER_CAP};

/// Product formula for the per-batch success probability, `Π_j (1 − b_j)`.
pub fn rho(block_probs: &[f64]) -> f64 {
    block_probs.iter().map(|b| 1.0 - b).product()
}

/// The lower bound `(1 − t)/e^{1 − t}` on `rho` in terms of `t = ‖block masses‖₂`.
pub fn rho_lower_bound(l2_norm: f64) -> f64 {
    (1.0 - l2_norm) / (1.0 - l2_norm).exp()
}

/// Where the copies of each symbol sit in a batch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchLayout {
    k: usize,
    duplicated: bool,
    /// `blocks[b][r]` is the copy id reported by message `r + 1` in block `b`.
    /// Copy ids are `x` for the first copy of symbol `x` and `k + x` for the second.
    blocks: Vec<Vec<usize>>,
    /// For each symbol, its (block, rank) for the first and (if duplicated) second copy.
    slots: Vec<[Option<(usize, u32)>; 2]>,
}

impl BatchLayout {
    /// The final scheme: duplicated alphabet, `m = max(2, ⌈2k/s⌉)` blocks in
    /// contiguous chunks over the copy ids `0, .., 2k − 1`.
    pub fn final_scheme(k: usize, ell: u32) -> Result<Self> {
        let s = block_capacity(ell)?;
        if k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        let m = (2 * k).div_ceil(s).max(2);
        BatchLayout::duplicated(k, ell, &Partition::contiguous(2 * k, m)?)
    }

    /// A duplicated layout from an explicit partition of the `2k` copy ids.
    pub fn duplicated(k: usize, ell: u32, part: &Partition) -> Result<Self> {
        if part.k() != 2 * k {
            return Err(Error::invalid("partition must cover the 2k copy ids"));
        }
        BatchLayout::build(k, ell, part, true)
    }

    /// The base scheme without duplication or referee flips.
    pub fn plain(k: usize, ell: u32, part: &Partition) -> Result<Self> {
        if part.k() != k {
            return Err(Error::invalid("partition must cover the k symbols"));
        }
        BatchLayout::build(k, ell, part, false)
    }

    fn build(k: usize, ell: u32, part: &Partition, duplicated: bool) -> Result<Self> {
        let s = block_capacity(ell)?;
        let blocks: Vec<Vec<usize>> = (0..part.parts()).map(|b| part.members(b)).collect();
        if let Some((b, blk)) = blocks.iter().enumerate().find(|(_, blk)| blk.len() > s) {
            return Err(Error::invalid(format!(
                "block {b} holds {} symbols but {ell}-bit messages index at most {s}",
                blk.len()
            )));
        }
        let mut slots = vec![[None, None]; k];
        for (b, blk) in blocks.iter().enumerate() {
            for (r, &copy) in blk.iter().enumerate() {
                slots[copy % k][copy / k] = Some((b, r as u32 + 1));
            }
        }
        if duplicated {
            for (x, sl) in slots.iter().enumerate() {
                if let [Some((b0, _)), Some((b1, _))] = sl {
                    if b0 == b1 {
                        return Err(Error::invalid(format!(
                            "both copies of symbol {x} share block {b0}"
                        )));
                    }
                }
            }
        }
        Ok(BatchLayout {
            k,
            duplicated,
            blocks,
            slots,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn is_duplicated(&self) -> bool {
        self.duplicated
    }

    pub fn blocks(&self) -> usize {
        self.blocks.len()
    }

    /// Players per batch: a declarer and a checker for every block.
    pub fn batch_size(&self) -> u64 {
        2 * self.blocks.len() as u64
    }

    /// Block served by player `i` of a batch (declarer `2b`, checker `2b + 1`).
    pub fn block_of_player(&self, i: usize) -> usize {
        i / 2
    }

    /// The message sent from block `b` on observing symbol `x`.
    pub fn message(&self, b: usize, x: usize) -> u32 {
        for (blk, r) in self.slots[x].iter().flatten() {
            if *blk == b {
                return *r;
            }
        }
        0
    }

    /// Symbol reported by message `r ≥ 1` of block `b`.
    pub fn symbol(&self, b: usize, r: u32) -> usize {
        self.blocks[b][r as usize - 1] % self.k
    }

    /// Copy id reported by message `r ≥ 1` of block `b`.
    pub fn copy_id(&self, b: usize, r: u32) -> usize {
        self.blocks[b][r as usize - 1]
    }

    /// The channel of every player serving block `b`.
    pub fn message_map(&self, b: usize, ell: u32) -> Result<MessageMap> {
        MessageMap::deterministic(ell, (0..self.k).map(|x| self.message(b, x)).collect())
    }

    /// Probability that one report from block `b` is nonzero after the
    /// referee's flip: `q(B_b)`.
    pub fn block_mass(&self, p: &Pmf, b: usize) -> f64 {
        let share = if self.duplicated { 0.5 } else { 1.0 };
        self.blocks[b].iter().map(|&c| share * p.prob(c % self.k)).sum()
    }

    pub fn block_masses(&self, p: &Pmf) -> Vec<f64> {
        (0..self.blocks.len()).map(|b| self.block_mass(p, b)).collect()
    }

    /// Exact per-batch success probability under `p`.
    pub fn rho(&self, p: &Pmf) -> f64 {
        rho(&self.block_masses(p))
    }

    /// The referee's rule on messages after flipping: the (block, rank) of
    /// the declared copy, or `None` for an abort.
    pub fn declare(&self, modified: &[u32]) -> Option<(usize, u32)> {
        let mut found = None;
        for b in 0..self.blocks.len() {
            let r = modified[2 * b];
            if r != 0 {
                if found.is_some() {
                    return None;
                }
                found = Some((b, r));
            }
        }
        let (b, r) = found?;
        (modified[2 * b + 1] == 0).then_some((b, r))
    }
}

fn block_capacity(ell: u32) -> Result<usize> {
    if ell == 0 || ell > 31 {
        return Err(Error::invalid(format!("ell = {ell} must lie in [1, 31]")));
    }
    Ok((1usize << ell) - 1)
}

/// One batch: draw a sample for every player, apply the referee's flips in
/// the duplicated scheme, and return the declared symbol if any.
pub fn run_batch<R: Rng + ?Sized>(layout: &BatchLayout, sampler: &Sampler, rng: &mut R) -> Option<usize> {
    let messages: Vec<u32> = (0..layout.batch_size() as usize)
        .map(|i| layout.message(layout.block_of_player(i), sampler.sample(rng)))
        .collect();
    referee_batch(layout, &messages, rng).map(|(b, r)| layout.symbol(b, r))
}

/// The referee's side of a batch: flips (in the duplicated scheme) drawn from
/// `rng`, then the declaration rule.
pub fn referee_batch<R: Rng + ?Sized>(
    layout: &BatchLayout,
    messages: &[u32],
    rng: &mut R,
) -> Option<(usize, u32)> {
    if layout.duplicated {
        let modified: Vec<u32> = messages
            .iter()
            .map(|&m| if m != 0 && rng.random::<bool>() { 0 } else { m })
            .collect();
        layout.declare(&modified)
    } else {
        layout.declare(messages)
    }
}

/// A simulated sample and what it cost.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimOutcome {
    pub symbol: usize,
    pub players_used: u64,
    pub batches_used: u64,
}

/// Simulates one sample from `p` with the final scheme.
pub fn simulate_sample<R: Rng + ?Sized>(p: &Pmf, ell: u32, rng: &mut R) -> Result<SimOutcome> {
    let layout = BatchLayout::final_scheme(p.k(), ell)?;
    simulate_with_layout(&layout, &Sampler::new(p), rng, PLAYER_CAP)
}

/// Runs batches of `layout` until one declares, within `cap` players.
pub fn simulate_with_layout<R: Rng + ?Sized>(
    layout: &BatchLayout,
    sampler: &Sampler,
    rng: &mut R,
    cap: u64,
) -> Result<SimOutcome> {
    let size = layout.batch_size();
    let mut batches = 0;
    while (batches + 1) * size <= cap {
        batches += 1;
        if let Some(symbol) = run_batch(layout, sampler, rng) {
            return Ok(SimOutcome {
                symbol,
                players_used: batches * size,
                batches_used: batches,
            });
        }
    }
    Err(Error::PlayerCap { cap })
}

/// Simulates `count` independent samples from `p`.
pub fn simulate_batch_of_samples<R: Rng + ?Sized>(
    p: &Pmf,
    ell: u32,
    count: usize,
    rng: &mut R,
) -> Result<Vec<SimOutcome>> {
    let layout = BatchLayout::final_scheme(p.k(), ell)?;
    let sampler = Sampler::new(p);
    (0..count)
        .map(|_| simulate_with_layout(&layout, &sampler, rng, PLAYER_CAP))
        .collect()
}

/// Runs one batch on players drawn from a capped stream, with flips from
/// `referee`. Returns `None` when the batch aborts.
pub fn run_batch_on_stream<R: Rng + ?Sized>(
    layout: &BatchLayout,
    players: &mut PlayerStream<'_>,
    referee: &mut R,
) -> Result<Option<usize>> {
    let messages = (0..layout.batch_size() as usize)
        .map(|i| {
            players
                .next_player()
                .map(|(_, x)| layout.message(layout.block_of_player(i), x))
        })
        .collect::<Result<Vec<u32>>>()?;
    Ok(referee_batch(layout, &messages, referee).map(|(b, r)| layout.symbol(b, r)))
}

/// Exact law of one batch by enumerating every player's message and every
/// referee flip. Returns the declaration probability of each copy id (`2k`
/// entries when duplicated, `k` otherwise) and the abort probability.
pub fn enumerate_batch(layout: &BatchLayout, p: &Pmf) -> (Vec<f64>, f64) {
    let players = layout.batch_size() as usize;
    // Outcomes of one player: each distinct modified message with its
    // probability, after the referee's flip in the duplicated scheme.
    let outcomes: Vec<Vec<(u32, f64)>> = (0..players)
        .map(|i| {
            let b = layout.block_of_player(i);
            let mut law: Vec<(u32, f64)> = Vec::new();
            let mut add = |m: u32, w: f64| match law.iter_mut().find(|(v, _)| *v == m) {
                Some(slot) => slot.1 += w,
                None => law.push((m, w)),
            };
            for x in 0..layout.k {
                let px = p.prob(x);
                if px == 0.0 {
                    continue;
                }
                let m = layout.message(b, x);
                if m != 0 && layout.duplicated {
                    add(m, px / 2.0);
                    add(0, px / 2.0);
                } else {
                    add(m, px);
                }
            }
            law
        })
        .collect();
    let copies = if layout.duplicated { 2 * layout.k } else { layout.k };
    let mut law = vec![Compensated::default(); copies];
    let mut abort = Compensated::default();
    let mut modified = vec![0u32; players];
    let mut prob = vec![1.0; players + 1];
    // Nonzero declarer messages among the first `d` players.
    let mut declared = vec![0u32; players + 1];
    let mut idx = vec![0usize; players];
    // Iterative depth-first walk over the product of outcome lists. A prefix
    // with two nonzero declarers, or a nonzero declarer whose checker is
    // also nonzero, aborts whatever follows, so its whole subtree is added
    // to the abort mass at once.
    let mut depth = 0;
    loop {
        if depth == players {
            match layout.declare(&modified) {
                Some((b, r)) => law[layout.copy_id(b, r)].add(prob[players]),
                None => abort.add(prob[players]),
            }
            depth -= 1;
            idx[depth] += 1;
            continue;
        }
        if idx[depth] < outcomes[depth].len() {
            let (m, w) = outcomes[depth][idx[depth]];
            modified[depth] = m;
            prob[depth + 1] = prob[depth] * w;
            let is_declarer = depth % 2 == 0;
            declared[depth + 1] = declared[depth] + (is_declarer && m != 0) as u32;
            let doomed = declared[depth + 1] > 1 || (!is_declarer && m != 0 && modified[depth - 1] != 0);
            if doomed {
                abort.add(prob[depth + 1]);
                idx[depth] += 1;
                continue;
            }
            depth += 1;
            if depth < players {
                idx[depth] = 0;
            }
        } else {
            if depth == 0 {
                break;
            }
            depth -= 1;
            idx[depth] += 1;
        }
    }
    let law = law.into_iter().map(|c| c.value()).collect();
    let abort = abort.value();
    (law, abort)
}

/// Neumaier-compensated running sum.
#[derive(Clone, Copy, Debug, Default)]
struct Compensated {
    sum: f64,
    carry: f64,
}

impl Compensated {
    fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.carry += (self.sum - t) + v;
        } else {
            self.carry += (v - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(self) -> f64 {
        self.sum + self.carry
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::{merge_pairs, paninski, point_mass, uniform, PaninskiParam};
    use crate::seed::rng_from_seed;

    #[test]
    fn rho_examples() {
        assert_eq!(rho(&[0.5, 0.5]), 0.25);
        assert_eq!(rho(&[1.0, 0.0]), 0.0);
        assert_eq!(rho(&[0.25; 4]), 0.31640625);
    }

    #[test]
    fn final_layout_shapes() {
        let l = BatchLayout::final_scheme(4, 1).unwrap();
        assert_eq!(l.blocks(), 8);
        assert_eq!(l.batch_size(), 16);
        let l = BatchLayout::final_scheme(16, 2).unwrap();
        assert_eq!(l.blocks(), 11);
        let l = BatchLayout::final_scheme(3, 2).unwrap();
        assert_eq!(l.blocks(), 2);
        // Copies of a symbol never share a block.
        for (k, ell) in [(1, 1), (1, 3), (5, 2), (7, 3), (64, 2), (100, 5)] {
            let l = BatchLayout::final_scheme(k, ell).unwrap();
            for sl in &l.slots {
                let (b0, _) = sl[0].unwrap();
                let (b1, _) = sl[1].unwrap();
                assert_ne!(b0, b1);
            }
            assert!(l.blocks.iter().all(|b| b.len() < 1 << ell));
        }
        let bad = Partition::new(1, vec![0, 0]).unwrap();
        assert!(BatchLayout::duplicated(1, 2, &bad).is_err());
        let big = Partition::new(1, vec![0; 4]).unwrap();
        assert!(BatchLayout::plain(4, 1, &big).is_err());
    }

    #[test]
    fn single_symbol_batch_by_enumeration() {
        let p = uniform(1).unwrap();
        let l = BatchLayout::final_scheme(1, 1).unwrap();
        let (law, abort) = enumerate_batch(&l, &p);
        // Two blocks with mass 1/2 each.
        assert!((law.iter().sum::<f64>() - 0.25).abs() < 1e-15);
        assert!((abort - 0.75).abs() < 1e-15);
        assert!((l.rho(&p) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn enumeration_is_exact_for_small_k() {
        let mut rng = rng_from_seed(8);
        for k in 1..=4 {
            for trial in 0..3 {
                let p = if trial == 0 {
                    uniform(k).unwrap()
                } else {
                    let w: Vec<f64> = (0..k).map(|_| rng.random::<f64>() + 0.01).collect();
                    Pmf::from_weights(&w).unwrap()
                };
                let layout = BatchLayout::final_scheme(k, 1).unwrap();
                let (law, abort) = enumerate_batch(&layout, &p);
                let success: f64 = law.iter().sum();
                assert!((success + abort - 1.0).abs() < 1e-12);
                assert!((success - layout.rho(&p)).abs() < 1e-12);
                let cond = Pmf::new(law.iter().map(|v| v / success).collect()).unwrap();
                let merged = merge_by_copy(&cond, k);
                for x in 0..k {
                    assert!((merged[x] - p.prob(x)).abs() < 1e-12, "k={k} x={x}");
                }
            }
        }
    }

    fn merge_by_copy(law: &Pmf, k: usize) -> Vec<f64> {
        (0..k).map(|x| law.prob(x) + law.prob(k + x)).collect()
    }

    #[test]
    fn three_symbols_one_block_plain() {
        let p = Pmf::new(vec![0.2, 0.3, 0.5]).unwrap();
        let layout = BatchLayout::plain(3, 2, &Partition::new(1, vec![0; 3]).unwrap()).unwrap();
        let (law, abort) = enumerate_batch(&layout, &p);
        // One block with mass 1: the checker always reports, so nothing is declared.
        assert_eq!(law.iter().sum::<f64>(), 0.0);
        assert_eq!(abort, 1.0);

        let layout = BatchLayout::final_scheme(3, 2).unwrap();
        let (law, _) = enumerate_batch(&layout, &p);
        let total: f64 = law.iter().sum();
        let merged: Vec<f64> = (0..3).map(|x| (law[x] + law[3 + x]) / total).collect();
        for x in 0..3 {
            assert!((merged[x] - p.prob(x)).abs() < 1e-12);
        }
    }

    #[test]
    fn plain_uniform_pair_by_enumeration() {
        let p = uniform(2).unwrap();
        let layout = BatchLayout::plain(2, 1, &Partition::singletons(2).unwrap()).unwrap();
        let (law, _) = enumerate_batch(&layout, &p);
        assert!((law.iter().sum::<f64>() - 0.25).abs() < 1e-15);
        let p4 = uniform(4).unwrap();
        let layout = BatchLayout::plain(4, 1, &Partition::singletons(4).unwrap()).unwrap();
        let (law, _) = enumerate_batch(&layout, &p4);
        assert!((law.iter().sum::<f64>() - 0.31640625).abs() < 1e-15);
    }

    #[test]
    fn point_mass_only_declares_its_symbol() {
        let p = point_mass(5, 2).unwrap();
        let mut rng = rng_from_seed(9);
        for ell in 1..=3 {
            for o in simulate_batch_of_samples(&p, ell, 200, &mut rng).unwrap() {
                assert_eq!(o.symbol, 2);
                assert_eq!(o.players_used, o.batches_used * BatchLayout::final_scheme(5, ell).unwrap().batch_size());
            }
        }
        let p = Pmf::new(vec![1.0, 0.0]).unwrap();
        assert!(simulate_batch_of_samples(&p, 1, 100, &mut rng)
            .unwrap()
            .iter()
            .all(|o| o.symbol == 0));
    }

    #[test]
    fn rho_bound_holds_on_final_layouts() {
        let mut rng = rng_from_seed(10);
        for _ in 0..200 {
            let k = rng.random_range(1..40);
            let ell = rng.random_range(1..5);
            let w: Vec<f64> = (0..k).map(|_| rng.random::<f64>().powi(4)).collect();
            let Ok(p) = Pmf::from_weights(&w) else { continue };
            let layout = BatchLayout::final_scheme(k, ell).unwrap();
            let masses = layout.block_masses(&p);
            let norm = masses.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(norm <= 1.0 / 2f64.sqrt() + 1e-12);
            assert!(layout.rho(&p) >= rho_lower_bound(norm) - 1e-12);
        }
    }

    #[test]
    fn zero_symbols_never_declared() {
        let p = paninski(&PaninskiParam::new(8, 0.5, vec![1, -1, 1, 1]).unwrap()).unwrap();
        let mut rng = rng_from_seed(11);
        for o in simulate_batch_of_samples(&p, 2, 2000, &mut rng).unwrap() {
            assert!(p.prob(o.symbol) > 0.0);
        }
    }

    #[test]
    fn seeded_runs_repeat() {
        let p = uniform(6).unwrap();
        let a = simulate_batch_of_samples(&p, 2, 50, &mut rng_from_seed(3)).unwrap();
        let b = simulate_batch_of_samples(&p, 2, 50, &mut rng_from_seed(3)).unwrap();
        assert_eq!(a, b);
        assert!(simulate_batch_of_samples(&p, 2, 0, &mut rng_from_seed(3)).unwrap().is_empty());
    }

    #[test]
    fn cap_is_reported() {
        let p = uniform(4).unwrap();
        let layout = BatchLayout::final_scheme(4, 1).unwrap();
        let err = simulate_with_layout(&layout, &Sampler::new(&p), &mut rng_from_seed(0), 10);
        assert_eq!(err, Err(Error::PlayerCap { cap: 10 }));
    }

    #[test]
    fn merged_duplicate_law_is_split() {
        // The copy-level conditional law is split_duplicate(p) up to ordering.
        let p = Pmf::new(vec![0.1, 0.6, 0.3]).unwrap();
        let layout = BatchLayout::final_scheme(3, 1).unwrap();
        let (law, _) = enumerate_batch(&layout, &p);
        let total: f64 = law.iter().sum();
        let interleaved: Vec<f64> = (0..3).flat_map(|x| [law[x] / total, law[3 + x] / total]).collect();
        let q = Pmf::new(interleaved).unwrap();
        let expect = crate::dist::split_duplicate(&p);
        for (a, b) in q.probs().iter().zip(expect.probs()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(merge_pairs(&q).unwrap().probs().len(), 3);
    }
}
