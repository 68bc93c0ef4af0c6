//! Centralized testers used as referee subroutines: the collision-based ℓ2
//! uniformity test, a two-sided coin-bias test, and the empirical learner.
//!
//! Verdicts depend only on the samples. The failure probability `δ` enters
//! only through the required sample size, which the checked entry points
//! enforce and the `*_decide` functions skip.

use crate::constants::Constants;
use crate::dist::Pmf;
use crate::error::{Error, Result};
use crate::smp::Verdict;

/// Parameters of the ℓ2 test of `u_L` against `‖q − u_L‖₂ ≥ γ/√L`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct L2TestParams {
    pub l: usize,
    pub gamma: f64,
    pub delta: f64,
}

impl L2TestParams {
    /// `gamma` may exceed one: the TV-to-ℓ2 conversion `γ = 2ε` of the
    /// centralized tester reaches one at `ε = 1/2`.
    pub fn new(l: usize, gamma: f64, delta: f64) -> Result<Self> {
        if l == 0 {
            return Err(Error::invalid("L must be at least 1"));
        }
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::invalid(format!("gamma = {gamma} must be positive")));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::invalid(format!("delta = {delta} must lie in (0, 1)")));
        }
        Ok(L2TestParams { l, gamma, delta })
    }

    /// `⌈c_l2 · √L / γ² · ln(1/δ)⌉`, at least 2.
    pub fn n_req(&self, c_l2: f64) -> u64 {
        let n = c_l2 * (self.l as f64).sqrt() / (self.gamma * self.gamma) * (1.0 / self.delta).ln();
        (n.ceil() as u64).max(2)
    }
}

/// Number of colliding pairs, `Σ_r C(c_r, 2)`.
pub fn collision_count(counts: &[u64]) -> f64 {
    counts
        .iter()
        .map(|&c| {
            let c = c as f64;
            c * (c - 1.0) / 2.0
        })
        .sum()
}

/// Histogram of samples over `[l]`.
pub fn histogram(samples: &[usize], l: usize) -> Result<Vec<u64>> {
    let mut counts = vec![0u64; l];
    for &x in samples {
        if x >= l {
            return Err(Error::invalid(format!("sample {x} outside [0, {l})")));
        }
        counts[x] += 1;
    }
    Ok(counts)
}

/// Result of the ℓ2 decision rule.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct L2Outcome {
    pub accept: bool,
    pub statistic: f64,
    pub threshold: f64,
}

/// The ℓ2 decision on a histogram with at least two samples.
///
/// With no explicit null the rule is the collision test: accept iff
/// `T / C(n,2) ≤ (1 + γ²/2)/L`. Against a null `q0` it accepts iff the
/// unbiased estimate of `‖q − q0‖₂²` is at most `γ²/(2L)`; for `q0 = u_L`
/// both rules coincide.
pub fn l2_decide(counts: &[u64], null: Option<&[f64]>, gamma: f64) -> L2Outcome {
    let l = counts.len() as f64;
    let n: f64 = counts.iter().sum::<u64>() as f64;
    let pairs = n * (n - 1.0) / 2.0;
    match null {
        None => {
            let statistic = collision_count(counts) / pairs;
            let threshold = (1.0 + gamma * gamma / 2.0) / l;
            L2Outcome {
                accept: statistic <= threshold,
                statistic,
                threshold,
            }
        }
        Some(q0) => {
            let second = collision_count(counts) / pairs;
            let cross: f64 = counts.iter().zip(q0).map(|(&c, &q)| q * c as f64).sum::<f64>() / n;
            let norm: f64 = q0.iter().map(|q| q * q).sum();
            let statistic = second - 2.0 * cross + norm;
            let threshold = gamma * gamma / (2.0 * l);
            L2Outcome {
                accept: statistic <= threshold,
                statistic,
                threshold,
            }
        }
    }
}

fn l2_verdict(outcome: L2Outcome, n: u64) -> Verdict {
    let v = if outcome.accept {
        Verdict::accept()
    } else {
        Verdict::reject()
    };
    v.with("statistic", outcome.statistic)
        .with("threshold", outcome.threshold)
        .with("samples", n as f64)
}

/// The ℓ2 uniformity test with the default constant.
pub fn l2_uniformity_test(samples: &[usize], params: &L2TestParams) -> Result<Verdict> {
    l2_uniformity_test_with(samples, params, Constants::default().c_l2)
}

/// The ℓ2 uniformity test requiring `⌈c_l2 · √L/γ² · ln(1/δ)⌉` samples.
pub fn l2_uniformity_test_with(samples: &[usize], params: &L2TestParams, c_l2: f64) -> Result<Verdict> {
    let need = params.n_req(c_l2);
    if (samples.len() as u64) < need {
        return Err(Error::invalid(format!(
            "l2 test needs n_req = {need} samples, got {}",
            samples.len()
        )));
    }
    let counts = histogram(samples, params.l)?;
    Ok(l2_verdict(l2_decide(&counts, None, params.gamma), samples.len() as u64))
}

/// Parameters of the test of bias `p0` against bias outside `(1 ± α)·p0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BiasTestParams {
    pub p0: f64,
    pub alpha: f64,
    pub delta: f64,
}

impl BiasTestParams {
    pub fn new(p0: f64, alpha: f64, delta: f64) -> Result<Self> {
        if !(p0 > 0.0 && p0 < 1.0) {
            return Err(Error::invalid(format!("p0 = {p0} must lie in (0, 1)")));
        }
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::invalid(format!("alpha = {alpha} must lie in (0, 1]")));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::invalid(format!("delta = {delta} must lie in (0, 1)")));
        }
        Ok(BiasTestParams { p0, alpha, delta })
    }

    /// `⌈c_bias · ln(2/δ) / (p0 α²)⌉`.
    pub fn n_req(&self, c_bias: f64) -> u64 {
        (c_bias * (2.0 / self.delta).ln() / (self.p0 * self.alpha * self.alpha)).ceil() as u64
    }
}

/// Accepts iff `|ones/n − p0| ≤ α·p0/2`.
pub fn bias_decide(ones: u64, n: u64, p0: f64, alpha: f64) -> bool {
    if n == 0 {
        return false;
    }
    let mean = ones as f64 / n as f64;
    (mean - p0).abs() <= alpha * p0 / 2.0
}

pub fn bias_test(bits: &[bool], params: &BiasTestParams) -> Result<Verdict> {
    bias_test_with(bits, params, Constants::default().c_bias)
}

pub fn bias_test_with(bits: &[bool], params: &BiasTestParams, c_bias: f64) -> Result<Verdict> {
    let need = params.n_req(c_bias);
    if (bits.len() as u64) < need {
        return Err(Error::invalid(format!(
            "bias test needs n_req = {need} bits, got {}",
            bits.len()
        )));
    }
    let ones = bits.iter().filter(|&&b| b).count() as u64;
    let n = bits.len() as u64;
    let v = if bias_decide(ones, n, params.p0, params.alpha) {
        Verdict::accept()
    } else {
        Verdict::reject()
    };
    Ok(v.with("mean", ones as f64 / n as f64))
}

/// Empirical frequencies of the samples over `[k]`.
pub fn learn_empirical(samples: &[usize], k: usize) -> Result<Pmf> {
    if samples.is_empty() {
        return Err(Error::invalid("cannot learn from zero samples"));
    }
    learn_from_counts(&histogram(samples, k)?)
}

pub fn learn_from_counts(counts: &[u64]) -> Result<Pmf> {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(Error::invalid("cannot learn from zero samples"));
    }
    Pmf::new(counts.iter().map(|&c| c as f64 / total as f64).collect())
}

/// Parameters of the centralized `(k, ε)` uniformity test: the ℓ2 test with
/// `γ = 2ε` (TV distance ε forces `‖p − u_k‖₂ ≥ 2ε/√k`) and `δ = 1/3`.
pub fn centralized_params(k: usize, eps: f64) -> Result<L2TestParams> {
    L2TestParams::new(k, 2.0 * eps, 1.0 / 3.0)
}

/// Required samples of the centralized uniformity test at the default constant.
pub fn centralized_n_req(k: usize, eps: f64) -> usize {
    centralized_params(k, eps)
        .map(|p| p.n_req(Constants::default().c_l2) as usize)
        .unwrap_or(usize::MAX)
}

pub fn centralized_uniformity_test(samples: &[usize], k: usize, eps: f64) -> Result<Verdict> {
    l2_uniformity_test(samples, &centralized_params(k, eps)?)
}

/// The centralized uniformity decision on a histogram, without a size check.
pub fn centralized_decide(counts: &[u64], eps: f64) -> L2Outcome {
    l2_decide(counts, None, 2.0 * eps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::{paninski, sample, tv, uniform, PaninskiParam, Sampler};
    use crate::seed::rng_from_seed;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::Rng;

    #[test]
    fn collision_extremes() {
        let p = L2TestParams::new(4, 0.5, 0.5).unwrap();
        let need = p.n_req(6.0) as usize;
        assert!(matches!(
            l2_uniformity_test(&vec![0; need - 1], &p),
            Err(Error::InvalidArgument(msg)) if msg.contains("n_req")
        ));
        assert!(l2_uniformity_test(&vec![2; need], &p).unwrap().is_reject());

        let spread: Vec<usize> = (0..4).collect();
        assert!(l2_decide(&histogram(&spread, 4).unwrap(), None, 0.5).accept);
    }

    #[test]
    fn null_rule_reduces_to_collision_rule() {
        let mut rng = rng_from_seed(1);
        for _ in 0..200 {
            let l = rng.random_range(2..10);
            let counts: Vec<u64> = (0..l).map(|_| rng.random_range(0..30)).collect();
            if counts.iter().sum::<u64>() < 2 {
                continue;
            }
            let gamma = rng.random_range(0.05..1.0);
            let a = l2_decide(&counts, None, gamma);
            let b = l2_decide(&counts, Some(&vec![1.0 / l as f64; l]), gamma);
            let slack = a.threshold - a.statistic;
            if slack.abs() > 1e-9 {
                assert_eq!(a.accept, b.accept);
            }
            assert!(((b.threshold - b.statistic) - slack).abs() < 1e-9);
        }
    }

    #[test]
    fn collision_expectation_by_enumeration() {
        // E[T] = C(n,2)·‖q‖² for every q, checked over all n-tuples.
        for (q, n) in [
            (vec![0.5, 0.5], 3usize),
            (vec![0.1, 0.2, 0.3, 0.4], 5),
            (vec![0.7, 0.2, 0.1], 6),
            (vec![0.25; 4], 6),
        ] {
            let k = q.len();
            let mut expect = 0.0;
            let total = k.pow(n as u32);
            for code in 0..total {
                let mut c = code;
                let mut counts = vec![0u64; k];
                let mut prob = 1.0;
                for _ in 0..n {
                    counts[c % k] += 1;
                    prob *= q[c % k];
                    c /= k;
                }
                expect += prob * collision_count(&counts);
            }
            let norm: f64 = q.iter().map(|v| v * v).sum();
            let pairs = (n * (n - 1) / 2) as f64;
            assert!((expect - pairs * norm).abs() < 1e-12, "{q:?}");
        }
    }

    #[test]
    fn l2_error_rates_at_required_n() {
        let delta = 0.1;
        for l in [4usize, 16] {
            let gamma = 0.5;
            let params = L2TestParams::new(l, gamma, delta).unwrap();
            let n = params.n_req(6.0) as usize;
            // Alternating perturbation with ‖q − u_L‖² = 2γ²/L.
            let shift = gamma * 2f64.sqrt() / l as f64;
            let far: Vec<f64> = (0..l)
                .map(|i| 1.0 / l as f64 + if i % 2 == 0 { shift } else { -shift })
                .collect();
            let far = Pmf::new(far).unwrap();
            let dist2: f64 = far.probs().iter().map(|v| (v - 1.0 / l as f64).powi(2)).sum();
            assert!((dist2 - 2.0 * gamma * gamma / l as f64).abs() < 1e-12);
            let null = uniform(l).unwrap();
            let mut rng = rng_from_seed(l as u64);
            let (mut false_rej, mut false_acc) = (0, 0);
            for _ in 0..1000 {
                let s: Vec<usize> = (0..n).map(|_| sample(&null, &mut rng)).collect();
                false_rej += l2_uniformity_test(&s, &params).unwrap().is_reject() as u32;
                let s: Vec<usize> = (0..n).map(|_| sample(&far, &mut rng)).collect();
                false_acc += l2_uniformity_test(&s, &params).unwrap().is_accept() as u32;
            }
            assert!(false_rej as f64 / 1000.0 <= delta, "L={l} false rejects {false_rej}");
            assert!(false_acc as f64 / 1000.0 <= delta, "L={l} false accepts {false_acc}");
        }
    }

    #[test]
    fn reject_rate_grows_with_distance() {
        let l = 8;
        let params = L2TestParams::new(l, 0.6, 0.2).unwrap();
        let n = params.n_req(2.0) as usize;
        let mut rates = Vec::new();
        for step in 0..5 {
            let shift = step as f64 * 0.02;
            let q: Vec<f64> = (0..l)
                .map(|i| 1.0 / l as f64 + if i % 2 == 0 { shift } else { -shift })
                .collect();
            let q = Pmf::new(q).unwrap();
            let sampler = Sampler::new(&q);
            let mut rng = rng_from_seed(77);
            let rejects = (0..400)
                .filter(|_| {
                    let s: Vec<usize> = (0..n).map(|_| sampler.sample(&mut rng)).collect();
                    !l2_decide(&histogram(&s, l).unwrap(), None, 0.6).accept
                })
                .count();
            rates.push(rejects as f64 / 400.0);
        }
        for w in rates.windows(2) {
            assert!(w[1] + 0.05 >= w[0], "{rates:?}");
        }
        assert!(rates[4] > rates[0] + 0.3, "{rates:?}");
    }

    #[test]
    fn bias_examples() {
        let params = BiasTestParams::new(0.5, 0.5, 0.1).unwrap();
        let n = params.n_req(12.0) as usize;
        assert!(bias_test(&vec![false; n], &params).unwrap().is_reject());
        assert!(bias_test(&vec![false; n - 1], &params).is_err());

        let mut rng = rng_from_seed(3);
        for (p0, alpha) in [(0.5, 0.5), (0.1, 0.3)] {
            let params = BiasTestParams::new(p0, alpha, 0.1).unwrap();
            let n = params.n_req(12.0) as usize;
            let mut null_acc = 0;
            let mut far_rej = 0;
            for _ in 0..1000 {
                let bits: Vec<bool> = (0..n).map(|_| rng.random_bool(p0)).collect();
                null_acc += bias_test(&bits, &params).unwrap().is_accept() as u32;
                let bits: Vec<bool> = (0..n).map(|_| rng.random_bool((1.0 + alpha) * p0)).collect();
                far_rej += bias_test(&bits, &params).unwrap().is_reject() as u32;
            }
            assert!(null_acc >= 900, "p0={p0}: {null_acc}");
            assert!(far_rej >= 900, "p0={p0}: {far_rej}");
        }
    }

    #[test]
    fn binary_alphabet_is_a_bias_test() {
        // For L = 2 the collision rule is |c1/n − 1/2| ≤ sqrt((n−1)γ²/(8n) + 1/(4n)).
        let mut rng = rng_from_seed(4);
        for _ in 0..500 {
            let n: u64 = rng.random_range(2..400);
            let c1 = rng.random_range(0..=n);
            let eps = rng.random_range(0.05..0.5);
            let gamma: f64 = 2.0 * eps;
            let nf = n as f64;
            let radius = ((nf - 1.0) * gamma * gamma / (8.0 * nf) + 1.0 / (4.0 * nf)).sqrt();
            let want = bias_decide(c1, n, 0.5, 4.0 * radius);
            let margin = ((c1 as f64 / nf - 0.5).abs() - radius).abs();
            if margin > 1e-9 {
                assert_eq!(centralized_decide(&[n - c1, c1], eps).accept, want);
            }
        }
    }

    #[test]
    fn learner_examples() {
        assert_eq!(learn_empirical(&[1, 1, 1], 2).unwrap().probs(), &[0.0, 1.0]);
        assert!(learn_empirical(&[], 2).is_err());

        let u = uniform(4).unwrap();
        let mut rng = rng_from_seed(5);
        let s: Vec<usize> = (0..100_000).map(|_| sample(&u, &mut rng)).collect();
        assert!(tv(&learn_empirical(&s, 4).unwrap(), &u).unwrap() <= 0.01);

        let mut good = 0;
        for _ in 0..200 {
            let p = paninski(&PaninskiParam::random(8, 0.2, &mut rng).unwrap()).unwrap();
            let n = (10.0 * 8.0 / 0.04) as usize;
            let sampler = Sampler::new(&p);
            let s: Vec<usize> = (0..n).map(|_| sampler.sample(&mut rng)).collect();
            good += (tv(&learn_empirical(&s, 8).unwrap(), &p).unwrap() <= 0.2) as u32;
        }
        assert!(good >= 180);
    }

    #[test]
    fn centralized_rates_k64() {
        let k = 64;
        let eps = 0.3;
        let n = centralized_n_req(k, eps);
        let mut rng = rng_from_seed(6);
        let u = Sampler::new(&uniform(k).unwrap());
        let mut acc = 0;
        let mut rej = 0;
        for _ in 0..300 {
            let s: Vec<usize> = (0..n).map(|_| u.sample(&mut rng)).collect();
            acc += centralized_uniformity_test(&s, k, eps).unwrap().is_accept() as u32;
            let far = Sampler::new(&paninski(&PaninskiParam::random(k, eps, &mut rng).unwrap()).unwrap());
            let s: Vec<usize> = (0..n).map(|_| far.sample(&mut rng)).collect();
            rej += centralized_uniformity_test(&s, k, eps).unwrap().is_reject() as u32;
        }
        assert!(acc >= 200 && rej >= 200, "acc {acc}, rej {rej}");
    }

    proptest! {
        #[test]
        fn testers_ignore_labels(
            samples in prop::collection::vec(0usize..6, 2..60),
            seed in any::<u64>(),
            gamma in 0.1f64..1.0,
        ) {
            let mut perm: Vec<usize> = (0..6).collect();
            perm.shuffle(&mut rng_from_seed(seed));
            let relabeled: Vec<usize> = samples.iter().map(|&x| perm[x]).collect();
            let a = l2_decide(&histogram(&samples, 6).unwrap(), None, gamma);
            let b = l2_decide(&histogram(&relabeled, 6).unwrap(), None, gamma);
            prop_assert_eq!(a, b);
        }
    }
}
