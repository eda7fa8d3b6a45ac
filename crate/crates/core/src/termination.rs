//! Walk-length distributions.
//!
//! A walk of length `s` makes `s` transitions and deposits load at
//! `s + 1` nodes. Deposits at step `k` are divided by the survival function
//! `τ(k) = P(X >= k)` so that every step is counted with unit weight in
//! expectation, whatever the distribution.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Poisson tables stop once the remaining tail mass drops below this.
pub const POISSON_TAIL_CUTOFF: f64 = 1e-15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TerminationStrategy {
    /// Halt after each step with probability `p_halt` (geometric lengths).
    Bernoulli { p_halt: f64 },
    /// Poisson lengths with the given mean, on a truncated table.
    Poisson { mean: f64, table: LengthTable },
    /// Arbitrary probability table over `0..=k_cap`.
    Empirical { table: LengthTable },
}

/// Probability mass and survival function over a finite support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthTable {
    pmf: Vec<f64>,
    /// `survival[k] = P(X >= k)`, one entry longer than `pmf` (last is 0).
    survival: Vec<f64>,
}

impl LengthTable {
    /// Builds from raw probabilities, normalizing away rounding residue.
    pub fn from_pmf(mut pmf: Vec<f64>) -> Result<Self> {
        if pmf.is_empty() || pmf.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::Domain(
                "length table needs nonnegative finite probabilities".into(),
            ));
        }
        let total: f64 = pmf.iter().sum();
        if (total - 1.0).abs() > 1e-6 {
            return Err(Error::Domain(format!(
                "length table sums to {total}, expected 1"
            )));
        }
        pmf.iter_mut().for_each(|p| *p /= total);
        while pmf.len() > 1 && *pmf.last().unwrap() == 0.0 {
            pmf.pop();
        }
        let mut survival = vec![0.0; pmf.len() + 1];
        for k in (0..pmf.len()).rev() {
            survival[k] = survival[k + 1] + pmf[k];
        }
        // τ(0) is exactly one by definition.
        survival[0] = 1.0;
        Ok(Self { pmf, survival })
    }

    /// Parses `k prob` lines; `#` starts a comment. Missing lengths have probability 0.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |msg: String| Error::Parse { line: idx + 1, msg };
            let fields: Vec<&str> = line.split_whitespace().collect();
            let [k, p] = fields.as_slice() else {
                return Err(bad("expected 'k prob'".into()));
            };
            let k: usize = k
                .parse()
                .map_err(|e| bad(format!("bad length '{k}': {e}")))?;
            let p: f64 = p
                .parse()
                .map_err(|e| bad(format!("bad probability '{p}': {e}")))?;
            entries.push((k, p));
        }
        let cap = entries
            .iter()
            .map(|&(k, _)| k)
            .max()
            .ok_or_else(|| Error::Parse {
                line: 0,
                msg: "empty length table".into(),
            })?;
        let mut pmf = vec![0.0; cap + 1];
        for (k, p) in entries {
            pmf[k] += p;
        }
        Self::from_pmf(pmf)
    }

    pub fn pmf(&self) -> &[f64] {
        &self.pmf
    }

    /// Largest length with nonzero probability.
    pub fn k_cap(&self) -> usize {
        self.pmf.len() - 1
    }

    fn survival(&self, k: usize) -> f64 {
        self.survival.get(k).copied().unwrap_or(0.0)
    }

    fn mean(&self) -> f64 {
        self.pmf.iter().enumerate().map(|(k, p)| k as f64 * p).sum()
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        // Inverse transform on the survival table: the largest k with U < τ(k).
        let u: f64 = rng.random();
        let mut k = 0;
        while k + 1 < self.pmf.len() && u < self.survival[k + 1] {
            k += 1;
        }
        k
    }
}

impl TerminationStrategy {
    pub fn bernoulli(p_halt: f64) -> Result<Self> {
        if !(p_halt > 0.0 && p_halt < 1.0) {
            return Err(Error::Domain(format!(
                "p_halt must lie in (0, 1), got {p_halt}"
            )));
        }
        Ok(Self::Bernoulli { p_halt })
    }

    /// Poisson lengths; the table runs until the tail drops below
    /// [`POISSON_TAIL_CUTOFF`] and the remainder is folded into the last bucket.
    pub fn poisson(mean: f64) -> Result<Self> {
        if !(mean > 0.0 && mean.is_finite()) {
            return Err(Error::Domain(format!(
                "poisson mean must be positive, got {mean}"
            )));
        }
        // Recurrence in log space avoids underflow of e^{-mean} for large means.
        let mut pmf = Vec::new();
        let mut log_p = -mean;
        let mut cumulative = 0.0;
        let mut k = 0usize;
        loop {
            let p = log_p.exp();
            pmf.push(p);
            cumulative += p;
            if (k as f64) > mean && (1.0 - cumulative < POISSON_TAIL_CUTOFF || p < 1e-18) {
                break;
            }
            k += 1;
            log_p += mean.ln() - (k as f64).ln();
        }
        let fold = 1.0 - cumulative;
        if fold > 0.0 {
            *pmf.last_mut().unwrap() += fold;
        }
        Ok(Self::Poisson {
            mean,
            table: LengthTable::from_pmf(pmf)?,
        })
    }

    pub fn empirical(pmf: Vec<f64>) -> Result<Self> {
        Ok(Self::Empirical {
            table: LengthTable::from_pmf(pmf)?,
        })
    }

    /// All mass at a single length.
    pub fn fixed_length(len: usize) -> Self {
        let mut pmf = vec![0.0; len + 1];
        pmf[len] = 1.0;
        Self::Empirical {
            table: LengthTable::from_pmf(pmf).expect("point mass is a valid table"),
        }
    }

    pub fn load_table(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(Self::Empirical {
            table: LengthTable::parse(&text)?,
        })
    }

    /// Poisson strategy with the same expected length as `bernoulli(p_halt)`.
    pub fn mean_matched_poisson(p_halt: f64) -> Result<Self> {
        Self::poisson((1.0 - p_halt) / p_halt)
    }

    pub fn mean_length(&self) -> f64 {
        match self {
            Self::Bernoulli { p_halt } => (1.0 - p_halt) / p_halt,
            Self::Poisson { table, .. } | Self::Empirical { table } => table.mean(),
        }
    }

    /// Largest possible length, if bounded.
    pub fn max_length(&self) -> Option<usize> {
        match self {
            Self::Bernoulli { .. } => None,
            Self::Poisson { table, .. } | Self::Empirical { table } => Some(table.k_cap()),
        }
    }

    /// `P(X = k)`.
    pub fn probability(&self, k: usize) -> f64 {
        match self {
            Self::Bernoulli { p_halt } => (1.0 - p_halt).powi(k as i32) * p_halt,
            Self::Poisson { table, .. } | Self::Empirical { table } => {
                table.pmf.get(k).copied().unwrap_or(0.0)
            }
        }
    }

    /// `τ(k) = P(X >= k)`; errors where a walk of length `k` is impossible.
    pub fn survival(&self, k: usize) -> Result<f64> {
        let tau = self.survival_unchecked(k);
        if tau > 0.0 {
            Ok(tau)
        } else {
            Err(Error::Domain(format!(
                "length {k} lies outside the support of {self}"
            )))
        }
    }

    pub(crate) fn survival_unchecked(&self, k: usize) -> f64 {
        match self {
            Self::Bernoulli { p_halt } => (1.0 - p_halt).powi(k.min(i32::MAX as usize) as i32),
            Self::Poisson { table, .. } | Self::Empirical { table } => table.survival(k),
        }
    }

    /// Table of `1/τ(k)` for `k = 0..=len`, zero where τ vanishes.
    pub(crate) fn inverse_survival_table(&self, len: usize) -> Vec<f64> {
        (0..=len)
            .map(|k| {
                let tau = self.survival_unchecked(k);
                if tau > 0.0 {
                    1.0 / tau
                } else {
                    0.0
                }
            })
            .collect()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        match self {
            Self::Bernoulli { p_halt } => {
                // Number of continuations before the first halt.
                let u: f64 = rng.random();
                let draws = (1.0 - u).ln() / (1.0 - p_halt).ln();
                if draws.is_finite() {
                    draws.floor() as usize
                } else {
                    usize::MAX
                }
            }
            Self::Poisson { table, .. } | Self::Empirical { table } => table.sample(rng),
        }
    }

    /// `m` i.i.d. lengths from a generator seeded with `seed`.
    pub fn sample_lengths(&self, m: usize, seed: u64) -> Vec<usize> {
        let mut rng = crate::rng::stream(seed, &[0x6c656e67]);
        (0..m).map(|_| self.sample(&mut rng)).collect()
    }
}

impl fmt::Display for TerminationStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Bernoulli { p_halt } => write!(f, "bernoulli:{p_halt}"),
            Self::Poisson { mean, .. } => write!(f, "poisson:{mean}"),
            Self::Empirical { table } => write!(f, "table[0..={}]", table.k_cap()),
        }
    }
}

impl FromStr for TerminationStrategy {
    type Err = Error;

    /// `bernoulli:<p>`, `poisson:<mean>` or `table:<path>`.
    fn from_str(s: &str) -> Result<Self> {
        let (kind, arg) = s
            .split_once(':')
            .ok_or_else(|| Error::Domain(format!("termination '{s}' must look like kind:value")))?;
        let number = || {
            arg.parse::<f64>()
                .map_err(|e| Error::Domain(format!("bad termination parameter '{arg}': {e}")))
        };
        match kind {
            "bernoulli" => Self::bernoulli(number()?),
            "poisson" => Self::poisson(number()?),
            "table" => Self::load_table(arg),
            other => Err(Error::Domain(format!("unknown termination kind '{other}'"))),
        }
    }
}
