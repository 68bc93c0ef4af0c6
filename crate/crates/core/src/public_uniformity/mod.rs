//! Public-coin uniformity testing: the random-partition protocol, the
//! warmup protocol that bias-tests single random symbols, and the
//! multi-scale random-subset protocol with its work-investment schedule.
//!
//! All three draw their partitions or subsets from the shared coins, so the
//! players and the referee agree on them without communication, and every
//! draw is logged with its description length.

mod levin;
mod smooth;
mod warmup;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use statrs::function::factorial::{ln_binomial, ln_factorial};

use crate::dist::{Partition, SubsetSpec};
use crate::error::{Error, Result};
use crate::smp::MessageMap;

pub use levin::{levin_threshold, LevinLevel, LevinPlan, LevinProtocol, LevinSchedule, MiniBatch};
pub use smooth::{SmoothPlan, SmoothProtocol, SmoothSchedule};
pub use warmup::{WarmupPlan, WarmupProtocol, WarmupSchedule};

/// A uniformly random partition of `[k]` into `l` parts whose sizes differ
/// by at most one (exactly `k/l` each when `l` divides `k`).
///
/// A uniform shuffle `π` is drawn and symbol `π(i)` goes to part `⌊i·l/k⌋`.
pub fn random_balanced_partition<R: Rng + ?Sized>(k: usize, l: usize, rng: &mut R) -> Result<Partition> {
    if l == 0 || l > k {
        return Err(Error::invalid(format!("cannot split {k} symbols into {l} parts")));
    }
    let mut order: Vec<usize> = (0..k).collect();
    order.shuffle(rng);
    let mut assign = vec![0; k];
    for (i, &x) in order.iter().enumerate() {
        assign[x] = i * l / k;
    }
    Partition::new(l, assign)
}

/// `log₂` of the number of labeled balanced partitions, `k! / Π size_r!`.
pub fn balanced_partition_log2(k: usize, l: usize) -> f64 {
    let sizes = (0..l).map(|r| (r + 1) * k / l - r * k / l);
    let ln = ln_factorial(k as u64) - sizes.map(|s| ln_factorial(s as u64)).sum::<f64>();
    ln / std::f64::consts::LN_2
}

/// A uniformly random `s`-subset of `[k]`.
pub fn random_subset<R: Rng + ?Sized>(k: usize, s: usize, rng: &mut R) -> Result<SubsetSpec> {
    if s == 0 || s > k {
        return Err(Error::invalid(format!("subset size {s} must lie in [1, {k}]")));
    }
    SubsetSpec::new(k, index::sample(rng, k, s).into_vec())
}

/// `log₂ C(k, s)`.
pub fn subset_log2(k: usize, s: usize) -> f64 {
    ln_binomial(k as u64, s as u64) / std::f64::consts::LN_2
}

/// The channel that sends 0 for symbols outside `S` and `r + 1` for the
/// `r`-th smallest member of `S`.
pub fn subset_report_strategy(subset: &SubsetSpec, ell: u32) -> Result<MessageMap> {
    let capacity = (1u64 << ell) - 1;
    if subset.s() as u64 > capacity {
        return Err(Error::invalid(format!(
            "a subset of size {} does not fit in {ell}-bit messages (at most {capacity})",
            subset.s()
        )));
    }
    let mut table = vec![0u32; subset.k()];
    for (r, &x) in subset.members().iter().enumerate() {
        table[x] = r as u32 + 1;
    }
    MessageMap::deterministic(ell, table)
}

/// The partition size used with `ℓ`-bit messages: `min(2^ℓ, k)`.
pub(crate) fn parts_for(k: usize, ell: u32) -> usize {
    if ell >= usize::BITS - 1 {
        return k;
    }
    k.min(1usize << ell)
}

pub(crate) fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(Error::invalid(format!("eps = {eps} must lie in (0, 1]")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;
    use std::collections::HashMap;

    #[test]
    fn extreme_partitions() {
        let mut rng = rng_from_seed(1);
        let p = random_balanced_partition(6, 6, &mut rng).unwrap();
        let mut seen = p.assign().to_vec();
        seen.sort_unstable();
        assert_eq!(seen, (0..6).collect::<Vec<_>>());
        let p = random_balanced_partition(6, 1, &mut rng).unwrap();
        assert!(p.assign().iter().all(|&r| r == 0));
        assert!(random_balanced_partition(3, 4, &mut rng).is_err());
    }

    #[test]
    fn balanced_partitions_of_four_are_uniform() {
        // There are C(4,2) = 6 labeled ways to split [4] into two pairs.
        let trials = 100_000;
        let mut freq: HashMap<Vec<usize>, usize> = HashMap::new();
        for seed in 0..trials {
            let mut rng = rng_from_seed(seed);
            let p = random_balanced_partition(4, 2, &mut rng).unwrap();
            *freq.entry(p.assign().to_vec()).or_default() += 1;
        }
        assert_eq!(freq.len(), 6);
        for (assign, count) in freq {
            let f = count as f64 / trials as f64;
            assert!((f - 1.0 / 6.0).abs() < 0.02, "{assign:?}: {f}");
        }
        assert!((balanced_partition_log2(4, 2) - 6f64.log2()).abs() < 1e-12);
    }

    #[test]
    fn unbalanced_sizes_differ_by_one() {
        let mut rng = rng_from_seed(2);
        let p = random_balanced_partition(10, 4, &mut rng).unwrap();
        let sizes = p.sizes();
        assert_eq!(sizes.iter().sum::<usize>(), 10);
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }

    #[test]
    fn subset_strategy_examples() {
        let s = SubsetSpec::new(4, vec![2]).unwrap();
        let w = subset_report_strategy(&s, 1).unwrap();
        assert_eq!(w.table().unwrap(), vec![0, 0, 1, 0]);

        let s = SubsetSpec::new(4, vec![0, 1, 2]).unwrap();
        let w = subset_report_strategy(&s, 2).unwrap();
        assert_eq!(w.table().unwrap(), vec![1, 2, 3, 0]);
        for r in 1..=3u32 {
            let x = s.members()[r as usize - 1];
            assert_eq!(w.fixed(x), Some(r));
        }
        assert!(subset_report_strategy(&s, 1).is_err());
    }

    #[test]
    fn subsets_are_distinct_and_counted() {
        let mut rng = rng_from_seed(3);
        for _ in 0..100 {
            let s = random_subset(20, 7, &mut rng).unwrap();
            assert_eq!(s.s(), 7);
        }
        assert!((subset_log2(8, 3) - 56f64.log2()).abs() < 1e-12);
    }
}
