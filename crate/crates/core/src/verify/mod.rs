//! Brute-force and closed-form checks of the formulas the protocols and
//! lower bounds rest on.
//!
//! * Flattening moments: `Z_r = Σ_i δ_i 1{X_i = r}` for a random balanced
//!   partition `X`, its variance formula, mean, fourth moment and
//!   anticoncentration.
//! * The χ² identity for mixtures of product distributions.
//! * The pair-difference matrix `H` of a deterministic channel, its
//!   Frobenius bound, and the sub-Gaussian bound on `θᵀHθ′`.
//! * The expected squared TV between message laws under uniform and under a
//!   random perturbation, for one-bit players.
//! * The subset-deficit identity behind the random-subset protocol, and the
//!   success probability of one simulation batch.

mod suite;

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::factorial::binomial;

use crate::dist::{paninski, Partition, PaninskiParam, Pmf};
use crate::error::{Error, Result};
use crate::public_uniformity::random_balanced_partition;
use crate::simulate::{enumerate_batch, rho_lower_bound, BatchLayout};
use crate::smp::MessageMap;

pub use suite::{run_suite, CheckRow, Relation, Suite};

/// A signed vector over `[k]` summing to zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Deviation {
    delta: Vec<f64>,
}

impl Deviation {
    pub fn new(delta: Vec<f64>) -> Result<Self> {
        if delta.is_empty() {
            return Err(Error::invalid("a deviation needs k >= 1 entries"));
        }
        let sum: f64 = delta.iter().sum();
        if sum.abs() > 1e-12 {
            return Err(Error::invalid(format!("deviation entries sum to {sum}, not 0")));
        }
        Ok(Deviation { delta })
    }

    /// `p − q`.
    pub fn between(p: &Pmf, q: &Pmf) -> Result<Self> {
        if p.k() != q.k() {
            return Err(Error::invalid("pmfs over different alphabets"));
        }
        let delta: Vec<f64> = p.probs().iter().zip(q.probs()).map(|(a, b)| a - b).collect();
        let mean = delta.iter().sum::<f64>() / delta.len() as f64;
        Deviation::new(delta.into_iter().map(|d| d - mean).collect())
    }

    pub fn k(&self) -> usize {
        self.delta.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.delta
    }

    pub fn norm_sq(&self) -> f64 {
        self.delta.iter().map(|d| d * d).sum()
    }
}

/// `Z_r = Σ_{i : X_i = r} δ_i` for a balanced partition.
pub fn flatten_z(delta: &Deviation, part: &Partition) -> Result<Vec<f64>> {
    if part.k() != delta.k() {
        return Err(Error::invalid("partition and deviation have different k"));
    }
    if !part.is_balanced() {
        return Err(Error::invalid("flattening moments need a balanced partition"));
    }
    let mut z = vec![0.0; part.parts()];
    for (i, &d) in delta.values().iter().enumerate() {
        z[part.part_of(i)] += d;
    }
    Ok(z)
}

/// `Var Z_r = (1/L)‖δ‖²(1 − 1/L + (L−1)/(L(k−1)))`.
pub fn var_zr_closed_form(delta: &Deviation, l: usize) -> Result<f64> {
    let k = delta.k();
    if l < 2 || !k.is_multiple_of(l) {
        return Err(Error::invalid(format!("need L >= 2 dividing k, got L = {l}, k = {k}")));
    }
    let (lf, kf) = (l as f64, k as f64);
    Ok(delta.norm_sq() / lf * (1.0 - 1.0 / lf + (lf - 1.0) / (lf * (kf - 1.0))))
}

/// Calls `f` on every labeled balanced partition of `[k]` into `l` parts.
pub fn for_each_balanced_partition(k: usize, l: usize, mut f: impl FnMut(&Partition)) -> Result<()> {
    if l == 0 || !k.is_multiple_of(l) {
        return Err(Error::invalid(format!("L = {l} must divide k = {k}")));
    }
    fn walk(i: usize, cap: usize, fill: &mut [usize], assign: &mut Vec<usize>, f: &mut dyn FnMut(&Partition)) {
        if i == assign.len() {
            f(&Partition::new(fill.len(), assign.clone()).expect("valid assignment"));
            return;
        }
        for r in 0..fill.len() {
            if fill[r] < cap {
                fill[r] += 1;
                assign[i] = r;
                walk(i + 1, cap, fill, assign, f);
                fill[r] -= 1;
            }
        }
    }
    let mut fill = vec![0; l];
    let mut assign = vec![0; k];
    walk(0, k / l, &mut fill, &mut assign, &mut f);
    Ok(())
}

/// Exact moments of `Z` over all labeled balanced partitions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExactFlattening {
    pub partitions: u64,
    /// `E[Z_r]` for each part.
    pub mean: Vec<f64>,
    /// `E[Z_r²]` for each part.
    pub second: Vec<f64>,
    /// `P[‖Z‖₂ > ‖δ‖₂ / 2]`.
    pub anticoncentration: f64,
}

pub fn exact_flattening(delta: &Deviation, l: usize) -> Result<ExactFlattening> {
    let mut count = 0u64;
    let mut mean = vec![0.0; l];
    let mut second = vec![0.0; l];
    let mut hits = 0u64;
    let half = delta.norm_sq().sqrt() / 2.0;
    let mut err = None;
    for_each_balanced_partition(delta.k(), l, |part| match flatten_z(delta, part) {
        Ok(z) => {
            count += 1;
            for r in 0..l {
                mean[r] += z[r];
                second[r] += z[r] * z[r];
            }
            hits += (z.iter().map(|v| v * v).sum::<f64>().sqrt() > half) as u64;
        }
        Err(e) => err = Some(e),
    })?;
    if let Some(e) = err {
        return Err(e);
    }
    let c = count as f64;
    Ok(ExactFlattening {
        partitions: count,
        mean: mean.into_iter().map(|v| v / c).collect(),
        second: second.into_iter().map(|v| v / c).collect(),
        anticoncentration: hits as f64 / c,
    })
}

/// Monte-Carlo moments of `Z` over random balanced partitions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Anticoncentration {
    pub trials: usize,
    /// Fraction of partitions with `‖Z‖₂ > ‖δ‖₂ / 2`.
    pub probability: f64,
    /// Largest `|mean of Z_r|` over the parts.
    pub max_abs_mean: f64,
    /// Standard error of that mean, from the closed-form variance.
    pub mean_stderr: f64,
    /// `E‖Z‖⁴ / ‖δ‖⁴` (0 when `δ = 0`).
    pub fourth_moment_ratio: f64,
}

pub fn flattening_anticoncentration<R: Rng + ?Sized>(
    delta: &Deviation,
    l: usize,
    trials: usize,
    rng: &mut R,
) -> Result<Anticoncentration> {
    if trials == 0 {
        return Err(Error::invalid("at least one trial is needed"));
    }
    let k = delta.k();
    let norm_sq = delta.norm_sq();
    let half = norm_sq.sqrt() / 2.0;
    let mut hits = 0usize;
    let mut mean = vec![0.0; l];
    let mut fourth = 0.0;
    for _ in 0..trials {
        let part = random_balanced_partition(k, l, rng)?;
        let z = flatten_z(delta, &part)?;
        let sq: f64 = z.iter().map(|v| v * v).sum();
        hits += (sq.sqrt() > half) as usize;
        fourth += sq * sq;
        for (m, v) in mean.iter_mut().zip(&z) {
            *m += v;
        }
    }
    let t = trials as f64;
    let var = if l >= 2 { var_zr_closed_form(delta, l)? } else { 0.0 };
    Ok(Anticoncentration {
        trials,
        probability: hits as f64 / t,
        max_abs_mean: mean.iter().map(|m| (m / t).abs()).fold(0.0, f64::max),
        mean_stderr: (var / t).sqrt(),
        fourth_moment_ratio: if norm_sq > 0.0 { fourth / t / (norm_sq * norm_sq) } else { 0.0 },
    })
}

/// Both sides of `χ²(E_Z[Q_Z^n], P^n) = E_{Z,Z′}[Π_i (1 + H_i(Z,Z′))] − 1`
/// with `H_i(z,z′) = Σ_m (Q_{z,i}(m) − P_i(m))(Q_{z′,i}(m) − P_i(m)) / P_i(m)`.
///
/// `p_rows[i]` is player `i`'s message law under the null, `q_rows[z][i]`
/// under mixture atom `z`, and `z_weights` the mixing weights. Messages with
/// zero null probability and zero alternative mass are skipped.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentityCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub residual: f64,
}

pub fn chi2_mixture_identity_check(
    p_rows: &[Vec<f64>],
    q_rows: &[Vec<Vec<f64>>],
    z_weights: &[f64],
) -> Result<IdentityCheck> {
    let n = p_rows.len();
    if n == 0 || n > 6 {
        return Err(Error::invalid(format!("need 1..=6 players to enumerate, got {n}")));
    }
    if q_rows.len() != z_weights.len() || q_rows.is_empty() {
        return Err(Error::invalid("one row set per mixture weight is required"));
    }
    let width = p_rows[0].len();
    let shapes_ok = p_rows.iter().all(|r| r.len() == width)
        && q_rows.iter().all(|z| z.len() == n && z.iter().all(|r| r.len() == width));
    if !shapes_ok || width == 0 || width > 16 {
        return Err(Error::invalid("rows must share one message alphabet of size 1..=16"));
    }
    // Left side: enumerate all message tuples.
    let tuples = width.pow(n as u32);
    let mut lhs = 0.0;
    let mut msg = vec![0usize; n];
    for t in 0..tuples {
        let mut rest = t;
        for m in msg.iter_mut() {
            *m = rest % width;
            rest /= width;
        }
        let p: f64 = msg.iter().enumerate().map(|(i, &m)| p_rows[i][m]).product();
        let mix: f64 = q_rows
            .iter()
            .zip(z_weights)
            .map(|(rows, w)| w * msg.iter().enumerate().map(|(i, &m)| rows[i][m]).product::<f64>())
            .sum();
        if p == 0.0 {
            if mix > 0.0 {
                return Err(Error::domain(format!(
                    "message tuple {msg:?} has null probability 0 but mixture mass {mix}"
                )));
            }
            continue;
        }
        lhs += mix * mix / p;
    }
    lhs -= 1.0;
    // Right side: the product formula over pairs of atoms.
    let mut rhs = 0.0;
    for (za, wa) in q_rows.iter().zip(z_weights) {
        for (zb, wb) in q_rows.iter().zip(z_weights) {
            let mut prod = 1.0;
            for i in 0..n {
                let h: f64 = (0..width)
                    .filter(|&m| p_rows[i][m] > 0.0)
                    .map(|m| (za[i][m] - p_rows[i][m]) * (zb[i][m] - p_rows[i][m]) / p_rows[i][m])
                    .sum();
                prod *= 1.0 + h;
            }
            rhs += wa * wb * prod;
        }
    }
    rhs -= 1.0;
    Ok(IdentityCheck {
        lhs,
        rhs,
        residual: (lhs - rhs).abs(),
    })
}

/// A symmetric `(k/2) × (k/2)` matrix, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HMatrix {
    pub half_k: usize,
    pub entries: Vec<f64>,
}

impl HMatrix {
    pub fn new(half_k: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != half_k * half_k {
            return Err(Error::invalid("entries must form a square matrix"));
        }
        let h = HMatrix { half_k, entries };
        for i in 0..half_k {
            for j in 0..i {
                if (h.get(i, j) - h.get(j, i)).abs() > 1e-12 {
                    return Err(Error::invalid(format!("matrix is not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(h)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.half_k + j]
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.entries.iter().map(|v| v * v).sum()
    }
}

/// `H[i₁][i₂] = Σ_m (W(m|2i₁) − W(m|2i₁+1))(W(m|2i₂) − W(m|2i₂+1)) / Σ_i (W(m|2i) + W(m|2i+1))`,
/// with messages no symbol maps to contributing nothing.
pub fn h_matrix(w: &MessageMap) -> Result<HMatrix> {
    let table = w
        .table()
        .ok_or_else(|| Error::invalid("the H matrix is defined for deterministic channels"))?;
    let k = table.len();
    if k % 2 != 0 {
        return Err(Error::invalid(format!("k = {k} must be even")));
    }
    let half = k / 2;
    let width = 1usize << w.ell();
    let mut denom = vec![0.0; width];
    for &m in &table {
        denom[m as usize] += 1.0;
    }
    let mut entries = vec![0.0; half * half];
    let diff = |i: usize, m: usize| (table[2 * i] as usize == m) as i32 - (table[2 * i + 1] as usize == m) as i32;
    for m in (0..width).filter(|&m| denom[m] > 0.0) {
        for a in 0..half {
            let da = diff(a, m);
            if da == 0 {
                continue;
            }
            for b in 0..half {
                let db = diff(b, m);
                if db != 0 {
                    entries[a * half + b] += f64::from(da * db) / denom[m];
                }
            }
        }
    }
    HMatrix::new(half, entries)
}

/// Exact `ln E[exp(λ θᵀHθ′)]` over independent uniform sign vectors, and
/// the bound `λ²‖H‖²_F`.
pub fn subgaussian_claim_check(h: &HMatrix, lambda: f64) -> Result<(f64, f64)> {
    let d = h.half_k;
    if d > 10 {
        return Err(Error::invalid(format!("half_k = {d} is too large to enumerate (max 10)")));
    }
    let signs = |mask: usize| -> Vec<f64> {
        (0..d).map(|i| if mask >> i & 1 == 1 { 1.0 } else { -1.0 }).collect()
    };
    let all: Vec<Vec<f64>> = (0..1usize << d).map(signs).collect();
    // Hθ′ once per θ′, then dot products; the mean of exponentials is
    // taken relative to the largest exponent.
    let mut total = 0.0;
    let mut max_exp = f64::NEG_INFINITY;
    let mut values = Vec::with_capacity(all.len() * all.len());
    for b in &all {
        let hb: Vec<f64> = (0..d).map(|i| (0..d).map(|j| h.get(i, j) * b[j]).sum()).collect();
        for a in &all {
            let v = lambda * a.iter().zip(&hb).map(|(x, y)| x * y).sum::<f64>();
            max_exp = max_exp.max(v);
            values.push(v);
        }
    }
    for v in &values {
        total += (v - max_exp).exp();
    }
    let log_mgf = max_exp + (total / values.len() as f64).ln();
    Ok((log_mgf, lambda * lambda * h.frobenius_sq()))
}

/// `E_θ[TV(R^u, R^θ)²]` for one-bit players against the perturbation family,
/// with the bound `4ε²n/k`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TvBound {
    pub mean_tv_sq: f64,
    /// Standard error of the mean (0 when every θ was enumerated).
    pub stderr: f64,
    pub bound: f64,
    pub exact: bool,
}

/// Enumerates all `2^n` message vectors. The sign vectors are enumerated
/// when `k/2 ≤ 12`, and otherwise `trials` random ones are drawn.
pub fn paninski_message_tv_bound<R: Rng + ?Sized>(
    maps: &[MessageMap],
    eps: f64,
    trials: usize,
    rng: &mut R,
) -> Result<TvBound> {
    let n = maps.len();
    if n == 0 || n > 12 {
        return Err(Error::invalid(format!("need 1..=12 players to enumerate, got {n}")));
    }
    let k = maps[0].k();
    if maps.iter().any(|w| w.ell() != 1 || w.k() != k) {
        return Err(Error::invalid("all players need one-bit channels over the same alphabet"));
    }
    let u = crate::dist::uniform(k)?;
    let law = |p: &Pmf| -> Result<Vec<f64>> {
        maps.iter().map(|w| w.message_law(p).map(|l| l.get(1).copied().unwrap_or(0.0))).collect()
    };
    let ones_u = law(&u)?;
    let tv_sq = |theta: Vec<i8>| -> Result<f64> {
        let p = paninski(&PaninskiParam::new(k, eps, theta)?)?;
        let ones_t = law(&p)?;
        let mut total = 0.0;
        for v in 0..1usize << n {
            let (mut a, mut b) = (1.0, 1.0);
            for i in 0..n {
                let bit = v >> i & 1 == 1;
                a *= if bit { ones_u[i] } else { 1.0 - ones_u[i] };
                b *= if bit { ones_t[i] } else { 1.0 - ones_t[i] };
            }
            total += (a - b).abs();
        }
        Ok((total / 2.0).powi(2))
    };
    let half = k / 2;
    let bound = 4.0 * eps * eps * n as f64 / k as f64;
    if half <= 12 {
        let count = 1usize << half;
        let mut sum = 0.0;
        for mask in 0..count {
            let theta = (0..half).map(|i| if mask >> i & 1 == 1 { 1 } else { -1 }).collect();
            sum += tv_sq(theta)?;
        }
        return Ok(TvBound {
            mean_tv_sq: sum / count as f64,
            stderr: 0.0,
            bound,
            exact: true,
        });
    }
    if trials < 2 {
        return Err(Error::invalid("sampling sign vectors needs at least two trials"));
    }
    let vals = (0..trials)
        .map(|_| tv_sq(PaninskiParam::random(k, eps, rng)?.theta().to_vec()))
        .collect::<Result<Vec<f64>>>()?;
    let mean = vals.iter().sum::<f64>() / trials as f64;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (trials - 1) as f64;
    Ok(TvBound {
        mean_tv_sq: mean,
        stderr: (var / trials as f64).sqrt(),
        bound,
        exact: false,
    })
}

/// `E_S Σ_{i∈S} 1{p_i ≤ 1/k}(1/k − p_i)` over all `s`-subsets `S`.
pub fn subset_deficit(p: &Pmf, s: usize) -> Result<f64> {
    let k = p.k();
    if s == 0 || s > k || k > 24 {
        return Err(Error::invalid(format!("need 1 <= s <= k <= 24, got s = {s}, k = {k}")));
    }
    let deficit: Vec<f64> = p.probs().iter().map(|&v| (1.0 / k as f64 - v).max(0.0)).collect();
    let mut total = 0.0;
    let mut count = 0u64;
    for mask in 0u32..1 << k {
        if mask.count_ones() as usize != s {
            continue;
        }
        count += 1;
        total += (0..k).filter(|i| mask >> i & 1 == 1).map(|i| deficit[i]).sum::<f64>();
    }
    debug_assert_eq!(count as f64, binomial(k as u64, s as u64).round());
    Ok(total / count as f64)
}

/// Exhaustive success probability of one batch against the product formula.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RhoCheck {
    pub enumerated: f64,
    pub formula: f64,
    pub lower_bound: f64,
    /// Largest gap between the declared law and `p`.
    pub law_error: f64,
}

pub fn rho_check(layout: &BatchLayout, p: &Pmf) -> Result<RhoCheck> {
    let (law, _) = enumerate_batch(layout, p);
    let success: f64 = law.iter().sum();
    let k = layout.k();
    let mut merged = vec![0.0; k];
    for (c, v) in law.iter().enumerate() {
        merged[c % k] += v;
    }
    let law_error = if success > 0.0 {
        merged
            .iter()
            .enumerate()
            .map(|(x, v)| (v / success - p.prob(x)).abs())
            .fold(0.0, f64::max)
    } else {
        f64::NAN
    };
    let masses = layout.block_masses(p);
    let norm = masses.iter().map(|b| b * b).sum::<f64>().sqrt();
    Ok(RhoCheck {
        enumerated: success,
        formula: layout.rho(p),
        lower_bound: rho_lower_bound(norm),
        law_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::{tv, uniform};
    use crate::seed::rng_from_seed;
    use proptest::prelude::*;
    use rand::Rng;

    fn example() -> Deviation {
        Deviation::new(vec![0.1, -0.1, 0.05, -0.05]).unwrap()
    }

    #[test]
    fn z_examples() {
        let d = example();
        let a = Partition::new(2, vec![0, 0, 1, 1]).unwrap();
        let z = flatten_z(&d, &a).unwrap();
        assert!(z.iter().all(|v| v.abs() < 1e-15));
        let b = Partition::new(2, vec![0, 1, 0, 1]).unwrap();
        let z = flatten_z(&d, &b).unwrap();
        assert!((z[0] - 0.15).abs() < 1e-15 && (z[1] + 0.15).abs() < 1e-15);
        let zero = Deviation::new(vec![0.0; 4]).unwrap();
        assert_eq!(flatten_z(&zero, &b).unwrap(), vec![0.0, 0.0]);
        assert!(flatten_z(&d, &Partition::new(2, vec![0, 0, 0, 1]).unwrap()).is_err());
    }

    #[test]
    fn variance_example() {
        let d = example();
        let v = var_zr_closed_form(&d, 2).unwrap();
        assert!((v - 0.05 / 6.0).abs() < 1e-15);
        let e = exact_flattening(&d, 2).unwrap();
        assert_eq!(e.partitions, 6);
        assert!((e.second[0] - 0.05 / 6.0).abs() < 1e-15);
        assert!(e.mean.iter().all(|m| m.abs() < 1e-15));
    }

    proptest! {
        #[test]
        fn variance_formula_is_exact(seed in any::<u64>(), idx in 0usize..5) {
            let (k, l) = [(4, 2), (6, 2), (6, 3), (8, 2), (8, 4)][idx];
            let mut rng = rng_from_seed(seed);
            let raw: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mean = raw.iter().sum::<f64>() / k as f64;
            let d = Deviation::new(raw.iter().map(|v| v - mean).collect()).unwrap();
            let e = exact_flattening(&d, l).unwrap();
            let v = var_zr_closed_form(&d, l).unwrap();
            for r in 0..l {
                prop_assert!((e.second[r] - v).abs() < 1e-12);
                prop_assert!(e.mean[r].abs() < 1e-12);
            }
            prop_assert!(v >= d.norm_sq() / (2.0 * l as f64) - 1e-15);
        }
    }

    #[test]
    fn monte_carlo_matches_enumeration_at_four() {
        let d = example();
        let exact = exact_flattening(&d, 2).unwrap().anticoncentration;
        let mc = flattening_anticoncentration(&d, 2, 20_000, &mut rng_from_seed(4)).unwrap();
        let sigma = (exact * (1.0 - exact) / 20_000.0).sqrt();
        assert!((mc.probability - exact).abs() <= 3.0 * sigma + 1e-12);
        let zero = Deviation::new(vec![0.0; 4]).unwrap();
        let mc = flattening_anticoncentration(&zero, 2, 1000, &mut rng_from_seed(4)).unwrap();
        assert_eq!(mc.probability, 0.0);
    }

    #[test]
    fn mixture_identity_examples() {
        let p = vec![vec![0.5, 0.5], vec![0.3, 0.7]];
        // Identical laws: both sides vanish.
        let same = chi2_mixture_identity_check(&p, &[p.clone(), p.clone()], &[0.5, 0.5]).unwrap();
        assert!(same.lhs.abs() < 1e-15 && same.rhs.abs() < 1e-15);
        // One atom: the product identity Π(1 + χ²_i) − 1.
        let q = vec![vec![0.6, 0.4], vec![0.2, 0.8]];
        let c = chi2_mixture_identity_check(&p, std::slice::from_ref(&q), &[1.0]).unwrap();
        let chi = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y) / y).sum::<f64>();
        let expect = (1.0 + chi(&q[0], &p[0])) * (1.0 + chi(&q[1], &p[1])) - 1.0;
        assert!((c.lhs - expect).abs() < 1e-12 && c.residual < 1e-12);
        // Null zero with alternative mass is a domain error.
        let bad = chi2_mixture_identity_check(&[vec![1.0, 0.0]], &[vec![vec![0.5, 0.5]]], &[1.0]);
        assert!(matches!(bad, Err(Error::Domain(_))));
    }

    #[test]
    fn h_matrix_examples() {
        let w = MessageMap::deterministic(1, vec![0, 0, 1, 1]).unwrap();
        let h = h_matrix(&w).unwrap();
        assert!(h.entries.iter().all(|v| *v == 0.0));
        let w = MessageMap::deterministic(1, vec![1, 0, 0, 0]).unwrap();
        let h = h_matrix(&w).unwrap();
        assert!((h.get(0, 0) - 4.0 / 3.0).abs() < 1e-15);
        assert_eq!((h.get(0, 1), h.get(1, 0), h.get(1, 1)), (0.0, 0.0, 0.0));
        assert!((h.frobenius_sq() - 16.0 / 9.0).abs() < 1e-15);
        let r = MessageMap::randomized(1, vec![vec![0.5, 0.5]; 4]).unwrap();
        assert!(h_matrix(&r).is_err());
    }

    #[test]
    fn frobenius_can_exceed_two_to_the_ell() {
        // Splitting the only pair across the two messages gives H = [2].
        let h = h_matrix(&MessageMap::deterministic(1, vec![0, 1]).unwrap()).unwrap();
        assert_eq!(h.entries, vec![2.0]);
        assert!(h.frobenius_sq() > 2.0);
        // Two pairs split the same way: every entry is 1.
        let h = h_matrix(&MessageMap::deterministic(1, vec![0, 1, 0, 1]).unwrap()).unwrap();
        assert_eq!(h.frobenius_sq(), 4.0);
    }

    proptest! {
        #[test]
        fn frobenius_is_at_most_two_to_the_ell_plus_one(
            seed in any::<u64>(),
            half in 1usize..9,
            ell in 1u32..4,
        ) {
            let mut rng = rng_from_seed(seed);
            let table = (0..2 * half).map(|_| rng.random_range(0..1u32 << ell)).collect();
            let h = h_matrix(&MessageMap::deterministic(ell, table).unwrap()).unwrap();
            prop_assert!(h.frobenius_sq() <= f64::from(1u32 << (ell + 1)) + 1e-9);
        }
    }

    #[test]
    fn subgaussian_examples() {
        let zero = HMatrix::new(2, vec![0.0; 4]).unwrap();
        assert_eq!(subgaussian_claim_check(&zero, 1.0).unwrap(), (0.0, 0.0));
        let h = HMatrix::new(2, vec![4.0 / 3.0, 0.0, 0.0, 0.0]).unwrap();
        let (lm, b) = subgaussian_claim_check(&h, 1.0).unwrap();
        assert!((lm - (4.0f64 / 3.0).cosh().ln()).abs() < 1e-12);
        assert!(lm <= b);
    }

    #[test]
    fn tv_bound_examples() {
        let maps: Vec<MessageMap> = (0..4)
            .map(|t| MessageMap::deterministic(1, (0..4).map(|x| (x <= t % 3) as u32).collect()).unwrap())
            .collect();
        let mut rng = rng_from_seed(1);
        let r = paninski_message_tv_bound(&maps, 0.0, 10, &mut rng).unwrap();
        assert_eq!(r.mean_tv_sq, 0.0);
        let r = paninski_message_tv_bound(&maps, 0.25, 10, &mut rng).unwrap();
        assert!(r.exact && (r.bound - 0.25).abs() < 1e-15);
        assert!(r.mean_tv_sq <= r.bound);
    }

    #[test]
    fn subset_deficit_is_a_scaled_distance() {
        let p = Pmf::new(vec![0.3, 0.3, 0.2, 0.1, 0.05, 0.05, 0.0, 0.0]).unwrap();
        let d = tv(&p, &uniform(8).unwrap()).unwrap();
        let lhs = subset_deficit(&p, 3).unwrap();
        assert!((lhs - 3.0 / 8.0 * d).abs() < 1e-15);
    }

    #[test]
    fn rho_check_small() {
        let p = Pmf::new(vec![0.2, 0.3, 0.5]).unwrap();
        let layout = BatchLayout::final_scheme(3, 1).unwrap();
        let r = rho_check(&layout, &p).unwrap();
        assert!((r.enumerated - r.formula).abs() < 1e-12);
        assert!(r.law_error < 1e-12);
        assert!(r.formula >= r.lower_bound);
    }
}
