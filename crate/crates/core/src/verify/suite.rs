//! Named batteries of the checks above, each reduced to a table row.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::*;
use crate::dist::{paninski, tv, uniform, PaninskiParam, Pmf};
use crate::public_uniformity::levin_threshold;
use crate::seed::{derive, rng_from_seed, SimRng};
use crate::simulate::BatchLayout;
use crate::smp::MessageMap;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    Flattening,
    Chi2,
    Hmatrix,
    Subgaussian,
    PaninskiTv,
    LevinLemma,
    Rho,
}

impl Suite {
    pub const ALL: [Suite; 7] = [
        Suite::Flattening,
        Suite::Chi2,
        Suite::Hmatrix,
        Suite::Subgaussian,
        Suite::PaninskiTv,
        Suite::LevinLemma,
        Suite::Rho,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Flattening => "flattening",
            Suite::Chi2 => "chi2",
            Suite::Hmatrix => "hmatrix",
            Suite::Subgaussian => "subgaussian",
            Suite::PaninskiTv => "paninski-tv",
            Suite::LevinLemma => "levin-lemma",
            Suite::Rho => "rho",
        }
    }

    pub fn parse(name: &str) -> Option<Suite> {
        Suite::ALL.into_iter().find(|s| s.name() == name)
    }
}

/// Direction of the comparison a row makes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    #[serde(rename = "<=")]
    AtMost,
    #[serde(rename = ">=")]
    AtLeast,
}

/// One line of a suite: the worst case of `cases` instances against a limit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckRow {
    pub suite: Suite,
    pub check: String,
    pub cases: usize,
    pub worst: f64,
    pub relation: Relation,
    pub limit: f64,
    pub passed: bool,
}

impl CheckRow {
    fn new(suite: Suite, check: &str, cases: usize, worst: f64, relation: Relation, limit: f64) -> Self {
        let passed = match relation {
            Relation::AtMost => worst <= limit,
            Relation::AtLeast => worst >= limit,
        };
        CheckRow {
            suite,
            check: check.to_string(),
            cases,
            worst,
            relation,
            limit,
            passed,
        }
    }
}

/// Runs one suite with randomness derived from `seed`.
pub fn run_suite(suite: Suite, seed: u64) -> Result<Vec<CheckRow>> {
    let mut rng = rng_from_seed(derive(seed, &[suite as u64]));
    match suite {
        Suite::Flattening => flattening(&mut rng),
        Suite::Chi2 => chi2(&mut rng),
        Suite::Hmatrix => hmatrix(&mut rng),
        Suite::Subgaussian => subgaussian(&mut rng),
        Suite::PaninskiTv => paninski_tv(&mut rng),
        Suite::LevinLemma => levin_lemma(&mut rng),
        Suite::Rho => rho(&mut rng),
    }
}

fn random_deviation(k: usize, rng: &mut SimRng) -> Result<Deviation> {
    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mean = raw.iter().sum::<f64>() / k as f64;
    Deviation::new(raw.into_iter().map(|v| (v - mean) / k as f64).collect())
}

fn random_pmf(k: usize, rng: &mut SimRng) -> Result<Pmf> {
    // Exponential weights, with some symbols zeroed to reach the boundary.
    let w: Vec<f64> = (0..k)
        .map(|_| if rng.random_bool(0.15) { 0.0 } else { -rng.random::<f64>().max(1e-300).ln() })
        .collect();
    if w.iter().all(|&v| v == 0.0) {
        return uniform(k);
    }
    Pmf::from_weights(&w)
}

fn random_table(k: usize, ell: u32, rng: &mut SimRng) -> Result<MessageMap> {
    let table = (0..k).map(|_| rng.random_range(0..1u32 << ell)).collect();
    MessageMap::deterministic(ell, table)
}

fn flattening(rng: &mut SimRng) -> Result<Vec<CheckRow>> {
    let s = Suite::Flattening;
    let mut rows = Vec::new();
    let (mut var_resid, mut mean_resid, mut sum_resid, mut cases) = (0f64, 0f64, 0f64, 0);
    for k in 2..=8usize {
        for l in (2..=k).filter(|l| k % l == 0) {
            for _ in 0..20 {
                let d = random_deviation(k, rng)?;
                let exact = exact_flattening(&d, l)?;
                let v = var_zr_closed_form(&d, l)?;
                for r in 0..l {
                    var_resid = var_resid.max((exact.second[r] - exact.mean[r].powi(2) - v).abs());
                    mean_resid = mean_resid.max(exact.mean[r].abs());
                }
                let mut err = None;
                for_each_balanced_partition(k, l, |part| match flatten_z(&d, part) {
                    Ok(z) => sum_resid = sum_resid.max(z.iter().sum::<f64>().abs()),
                    Err(e) => err = Some(e),
                })?;
                if let Some(e) = err {
                    return Err(e);
                }
                cases += 1;
            }
        }
    }
    rows.push(CheckRow::new(s, "variance closed form vs enumeration (k <= 8)", cases, var_resid, Relation::AtMost, 1e-12));
    rows.push(CheckRow::new(s, "mean of each part is zero", cases, mean_resid, Relation::AtMost, 1e-12));
    rows.push(CheckRow::new(s, "flattened deviation sums to zero", cases, sum_resid, Relation::AtMost, 1e-12));

    let mut worst = f64::INFINITY;
    let mut n = 0;
    for k in [16usize, 64] {
        for l in [2usize, 4] {
            let p = paninski(&PaninskiParam::random(k, 0.3, rng)?)?;
            let d = Deviation::between(&p, &uniform(k)?)?;
            let a = flattening_anticoncentration(&d, l, 10_000, rng)?;
            worst = worst.min(a.probability);
            n += 1;
        }
    }
    rows.push(CheckRow::new(s, "anticoncentration on perturbations (10^4 partitions)", n, worst, Relation::AtLeast, 0.05));
    Ok(rows)
}

fn chi2(rng: &mut SimRng) -> Result<Vec<CheckRow>> {
    let mut worst = 0f64;
    for _ in 0..200 {
        let n = rng.random_range(1..=3usize);
        let width = rng.random_range(2..=4usize);
        let atoms = rng.random_range(2..=4usize);
        let row = |rng: &mut SimRng| -> Vec<f64> {
            let w: Vec<f64> = (0..width).map(|_| rng.random_range(0.05..1.0)).collect();
            let t: f64 = w.iter().sum();
            w.into_iter().map(|v| v / t).collect()
        };
        let p_rows: Vec<Vec<f64>> = (0..n).map(|_| row(rng)).collect();
        let q_rows: Vec<Vec<Vec<f64>>> = (0..atoms).map(|_| (0..n).map(|_| row(rng)).collect()).collect();
        let weights = {
            let w: Vec<f64> = (0..atoms).map(|_| rng.random_range(0.1..1.0)).collect();
            let t: f64 = w.iter().sum();
            w.into_iter().map(|v| v / t).collect::<Vec<_>>()
        };
        worst = worst.max(chi2_mixture_identity_check(&p_rows, &q_rows, &weights)?.residual);
    }
    Ok(vec![CheckRow::new(Suite::Chi2, "mixture identity residual", 200, worst, Relation::AtMost, 1e-9)])
}

fn hmatrix(rng: &mut SimRng) -> Result<Vec<CheckRow>> {
    let mut rows = Vec::new();
    for ell in [1u32, 2] {
        let mut worst = f64::NEG_INFINITY;
        let mut asym = 0f64;
        for _ in 0..100 {
            let k = 2 * rng.random_range(2..=8usize);
            let h = h_matrix(&random_table(k, ell, rng)?)?;
            worst = worst.max(h.frobenius_sq() - 2f64.powi(ell as i32));
            for i in 0..h.half_k {
                for j in 0..h.half_k {
                    asym = asym.max((h.get(i, j) - h.get(j, i)).abs());
                }
            }
        }
        let label = format!("Frobenius norm squared minus 2^ell (ell = {ell})");
        rows.push(CheckRow::new(Suite::Hmatrix, &label, 100, worst, Relation::AtMost, 0.0));
        rows.push(CheckRow::new(Suite::Hmatrix, &format!("asymmetry (ell = {ell})"), 100, asym, Relation::AtMost, 0.0));
    }
    Ok(rows)
}

fn subgaussian(rng: &mut SimRng) -> Result<Vec<CheckRow>> {
    let lambdas = [0.1, 1.0, 3.0];
    let mut rows = Vec::new();
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..50 {
        let d = rng.random_range(1..=6usize);
        let mut e = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..=i {
                let v = rng.random_range(-1.0..1.0);
                e[i * d + j] = v;
                e[j * d + i] = v;
            }
        }
        let h = HMatrix::new(d, e)?;
        for &l in &lambdas {
            let (lm, b) = subgaussian_claim_check(&h, l)?;
            worst = worst.max(lm - b);
        }
    }
    rows.push(CheckRow::new(Suite::Subgaussian, "log-MGF minus bound, random symmetric H", 150, worst, Relation::AtMost, 0.0));
    let mut worst = f64::NEG_INFINITY;
    let mut cases = 0;
    for half in 1..=6usize {
        for ell in [1u32, 2] {
            for _ in 0..5 {
                let h = h_matrix(&random_table(2 * half, ell, rng)?)?;
                for &l in &lambdas {
                    let (lm, b) = subgaussian_claim_check(&h, l)?;
                    worst = worst.max(lm - b);
                    cases += 1;
                }
            }
        }
    }
    rows.push(CheckRow::new(Suite::Subgaussian, "log-MGF minus bound, H of deterministic channels", cases, worst, Relation::AtMost, 0.0));
    Ok(rows)
}

fn paninski_tv(rng: &mut SimRng) -> Result<Vec<CheckRow>> {
    let mut worst = f64::NEG_INFINITY;
    let mut cases = 0;
    for k in [4usize, 8] {
        for n in [1usize, 2, 4, 8, 12] {
            for eps in [0.1, 0.25, 0.5] {
                let maps = (0..n).map(|_| random_table(k, 1, rng)).collect::<Result<Vec<_>>>()?;
                let r = paninski_message_tv_bound(&maps, eps, 0, rng)?;
                worst = worst.max(r.mean_tv_sq - r.bound);
                cases += 1;
            }
        }
    }
    Ok(vec![CheckRow::new(
        Suite::PaninskiTv,
        "expected squared TV minus 4 eps^2 n / k (one-bit, n <= 12)",
        cases,
        worst,
        Relation::AtMost,
        0.0,
    )])
}

fn levin_lemma(rng: &mut SimRng) -> Result<Vec<CheckRow>> {
    let mut missing = 0usize;
    let mut worst_margin = f64::INFINITY;
    let mut cases = 0;
    while cases < 1000 {
        let len = rng.random_range(1..=300usize);
        let eps = rng.random_range(0.01..0.6);
        let shape = rng.random_range(0.2..6.0);
        let mut q: Vec<f64> = (0..len).map(|_| rng.random::<f64>().powf(shape)).collect();
        // Sparse spikes exercise the small-j end of the ladder.
        if rng.random_bool(0.3) {
            q.iter_mut().for_each(|v| *v = if rng.random_bool(0.1) { 1.0 } else { *v * 0.01 });
        }
        let mean = q.iter().sum::<f64>() / len as f64;
        if mean <= eps {
            continue;
        }
        cases += 1;
        match levin_threshold(&q, eps)? {
            None => missing += 1,
            Some(j) => {
                let scales = (2.0 / eps).log2().ceil().max(1.0) as usize;
                let level = 2f64.powi(-(j as i32));
                let frac = q.iter().filter(|&&v| v > level).count() as f64 / len as f64;
                let t = (scales + 5 - j) as f64;
                worst_margin = worst_margin.min(frac - eps / (level * t * t));
            }
        }
    }
    let mut rows = vec![
        CheckRow::new(Suite::LevinLemma, "profiles without a valid scale", cases, missing as f64, Relation::AtMost, 0.0),
        CheckRow::new(Suite::LevinLemma, "margin of the returned scale", cases, worst_margin, Relation::AtLeast, f64::MIN_POSITIVE),
    ];

    // Random s-subsets of a far pmf lose at least eps * s / k of uniform mass.
    let (k, s, eps) = (8usize, 3usize, 0.3);
    let mut worst = f64::INFINITY;
    let mut n = 0;
    while n < 20 {
        let p = random_pmf(k, rng)?;
        if tv(&p, &uniform(k)?)? <= eps {
            continue;
        }
        let mut perm: Vec<usize> = (0..k).collect();
        perm.shuffle(rng);
        let p = p.permuted(&perm)?;
        worst = worst.min(subset_deficit(&p, s)? - eps * s as f64 / k as f64);
        n += 1;
    }
    rows.push(CheckRow::new(
        Suite::LevinLemma,
        "subset deficit minus eps s / k (k = 8, s = 3, far instances)",
        n,
        worst,
        Relation::AtLeast,
        f64::MIN_POSITIVE,
    ));
    Ok(rows)
}

fn rho(rng: &mut SimRng) -> Result<Vec<CheckRow>> {
    let mut formula = 0f64;
    let mut law = 0f64;
    let mut cases = 0;
    for k in 1..=4usize {
        for ell in [1u32, 2] {
            for _ in 0..5 {
                let p = random_pmf(k, rng)?;
                let r = rho_check(&BatchLayout::final_scheme(k, ell)?, &p)?;
                formula = formula.max((r.enumerated - r.formula).abs());
                if r.law_error.is_finite() {
                    law = law.max(r.law_error);
                }
                cases += 1;
            }
        }
    }
    let mut rows = vec![
        CheckRow::new(Suite::Rho, "product formula vs enumeration (k <= 4)", cases, formula, Relation::AtMost, 1e-12),
        CheckRow::new(Suite::Rho, "declared law vs p (k <= 4)", cases, law, Relation::AtMost, 1e-12),
    ];
    let mut worst = f64::INFINITY;
    for _ in 0..1000 {
        let k = rng.random_range(2..=64usize);
        let ell = rng.random_range(1..=4u32);
        let p = random_pmf(k, rng)?;
        let layout = BatchLayout::final_scheme(k, ell)?;
        let masses = layout.block_masses(&p);
        let norm = masses.iter().map(|b| b * b).sum::<f64>().sqrt();
        worst = worst.min(layout.rho(&p) - rho_lower_bound(norm));
    }
    rows.push(CheckRow::new(Suite::Rho, "rho minus its lower bound (random pmfs)", 1000, worst, Relation::AtLeast, 0.0));
    Ok(rows)
}
