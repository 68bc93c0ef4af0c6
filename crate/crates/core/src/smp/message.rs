use rand::Rng;

use crate::dist::Pmf;
use crate::error::{Error, Result};

/// Largest message width for which randomized rows are stored densely.
pub const MAX_DENSE_ELL: u32 = 20;

#[derive(Clone, Debug, PartialEq)]
enum Row {
    Point(u32),
    Mixed(Vec<f64>),
}

/// A player's channel from `[k]` to ℓ-bit messages `{0, .., 2^ℓ − 1}`.
///
/// Each input symbol has its own row: either a fixed message or a
/// distribution over all `2^ℓ` messages.
#[derive(Clone, Debug, PartialEq)]
pub struct MessageMap {
    ell: u32,
    rows: Vec<Row>,
}

impl MessageMap {
    /// A deterministic channel sending `table[x]` on input `x`.
    pub fn deterministic(ell: u32, table: Vec<u32>) -> Result<Self> {
        check_ell(ell)?;
        if table.is_empty() {
            return Err(Error::invalid("a message map needs k >= 1 rows"));
        }
        if let Some((x, m)) = table.iter().enumerate().find(|(_, m)| !fits(**m, ell)) {
            return Err(Error::invalid(format!(
                "symbol {x} maps to message {m}, which needs more than {ell} bits"
            )));
        }
        Ok(MessageMap {
            ell,
            rows: table.into_iter().map(Row::Point).collect(),
        })
    }

    /// A randomized channel; `rows[x][m]` is the probability of sending `m` on input `x`.
    pub fn randomized(ell: u32, rows: Vec<Vec<f64>>) -> Result<Self> {
        check_ell(ell)?;
        if ell > MAX_DENSE_ELL {
            return Err(Error::Unsupported(format!(
                "randomized rows need ell <= {MAX_DENSE_ELL}"
            )));
        }
        if rows.is_empty() {
            return Err(Error::invalid("a message map needs k >= 1 rows"));
        }
        let width = 1usize << ell;
        let rows = rows
            .into_iter()
            .enumerate()
            .map(|(x, row)| {
                if row.len() != width {
                    return Err(Error::invalid(format!(
                        "row {x} has {} entries, expected 2^ell = {width}",
                        row.len()
                    )));
                }
                let pmf = Pmf::new(row)
                    .map_err(|e| Error::invalid(format!("row {x} is not a distribution: {e}")))?;
                let support: Vec<usize> = pmf.support().collect();
                Ok(if support.len() == 1 {
                    Row::Point(support[0] as u32)
                } else {
                    Row::Mixed(pmf.probs().to_vec())
                })
            })
            .collect::<Result<_>>()?;
        Ok(MessageMap { ell, rows })
    }

    /// Sends the input symbol itself; requires `k <= 2^ℓ`.
    pub fn identity(k: usize, ell: u32) -> Result<Self> {
        MessageMap::deterministic(ell, (0..k as u32).collect())
    }

    pub fn k(&self) -> usize {
        self.rows.len()
    }

    pub fn ell(&self) -> u32 {
        self.ell
    }

    pub fn is_deterministic(&self) -> bool {
        self.rows.iter().all(|r| matches!(r, Row::Point(_)))
    }

    /// The fixed message for input `x`, if that row is deterministic.
    pub fn fixed(&self, x: usize) -> Option<u32> {
        match self.rows[x] {
            Row::Point(m) => Some(m),
            Row::Mixed(_) => None,
        }
    }

    /// The full lookup table when every row is deterministic.
    pub fn table(&self) -> Option<Vec<u32>> {
        (0..self.k()).map(|x| self.fixed(x)).collect()
    }

    /// Probability of sending `m` on input `x`.
    pub fn prob(&self, m: u32, x: usize) -> f64 {
        match &self.rows[x] {
            Row::Point(v) => {
                if *v == m {
                    1.0
                } else {
                    0.0
                }
            }
            Row::Mixed(probs) => probs.get(m as usize).copied().unwrap_or(0.0),
        }
    }

    /// Draws the message for input `x`; `rng` is consulted only for randomized rows.
    pub fn emit<R: Rng + ?Sized>(&self, x: usize, rng: &mut R) -> u32 {
        match &self.rows[x] {
            Row::Point(m) => *m,
            Row::Mixed(probs) => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut last = 0;
                for (m, &v) in probs.iter().enumerate() {
                    if v > 0.0 {
                        last = m;
                        acc += v;
                        if u < acc {
                            return m as u32;
                        }
                    }
                }
                last as u32
            }
        }
    }

    /// Law of the message when the input is drawn from `p`, over the
    /// messages `0..=max`, where `max` is the largest reachable message.
    pub fn message_law(&self, p: &Pmf) -> Result<Vec<f64>> {
        if p.k() != self.k() {
            return Err(Error::invalid("pmf and message map have different alphabets"));
        }
        let mut law: Vec<f64> = Vec::new();
        for (x, &px) in p.probs().iter().enumerate() {
            if px == 0.0 {
                continue;
            }
            match &self.rows[x] {
                Row::Point(m) => {
                    let m = *m as usize;
                    if law.len() <= m {
                        law.resize(m + 1, 0.0);
                    }
                    law[m] += px;
                }
                Row::Mixed(probs) => {
                    if law.len() < probs.len() {
                        law.resize(probs.len(), 0.0);
                    }
                    for (m, &w) in probs.iter().enumerate() {
                        law[m] += px * w;
                    }
                }
            }
        }
        Ok(law)
    }
}

fn check_ell(ell: u32) -> Result<()> {
    if ell == 0 || ell > 31 {
        return Err(Error::invalid(format!("ell = {ell} must lie in [1, 31]")));
    }
    Ok(())
}

pub(crate) fn fits(m: u32, ell: u32) -> bool {
    ell >= 32 || m >> ell == 0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;

    #[test]
    fn deterministic_maps() {
        let w = MessageMap::deterministic(1, vec![0, 0, 1, 0]).unwrap();
        assert!(w.is_deterministic());
        assert_eq!(w.table().unwrap(), vec![0, 0, 1, 0]);
        assert_eq!(w.prob(1, 2), 1.0);
        assert_eq!(w.prob(1, 1), 0.0);
        assert!(MessageMap::deterministic(1, vec![0, 2]).is_err());
        assert!(MessageMap::deterministic(0, vec![0]).is_err());
        assert!(MessageMap::identity(4, 2).is_ok());
        assert!(MessageMap::identity(5, 2).is_err());
    }

    #[test]
    fn randomized_rows() {
        let w = MessageMap::randomized(1, vec![vec![0.5, 0.5], vec![0.0, 1.0]]).unwrap();
        assert!(!w.is_deterministic());
        assert_eq!(w.fixed(1), Some(1));
        assert_eq!(w.fixed(0), None);
        assert!(MessageMap::randomized(1, vec![vec![0.5, 0.4]]).is_err());
        assert!(MessageMap::randomized(2, vec![vec![0.5, 0.5]]).is_err());

        let mut rng = rng_from_seed(5);
        let n = 20_000;
        let ones = (0..n).filter(|_| w.emit(0, &mut rng) == 1).count();
        assert!((ones as f64 / n as f64 - 0.5).abs() < 0.02);
    }

    #[test]
    fn message_law_pushes_forward() {
        let p = Pmf::new(vec![0.5, 0.25, 0.25]).unwrap();
        let w = MessageMap::randomized(
            2,
            vec![
                vec![1.0, 0.0, 0.0, 0.0],
                vec![0.0, 0.5, 0.5, 0.0],
                vec![0.0, 0.0, 0.0, 1.0],
            ],
        )
        .unwrap();
        assert_eq!(w.message_law(&p).unwrap(), vec![0.5, 0.125, 0.125, 0.25]);
    }
}
