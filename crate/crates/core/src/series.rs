//! Kernel coefficient sequences and modulation functions.
//!
//! A kernel `K = Σ_k α_k W^k` is described by its coefficient sequence α. For
//! stitching degree `l` the per-walk modulation `f` must satisfy
//! `α = f * f * ... * f` (2l-fold discrete self-convolution), i.e. the
//! generating function of `f` is the `2l`-th root of that of α.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_K_MAX: usize = 30;

/// Which closed form (if any) produced a coefficient sequence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "snake_case")]
pub enum SeriesKind {
    Diffusion { lambda: f64 },
    Geometric { gamma: f64 },
    Custom,
}

impl fmt::Display for SeriesKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Diffusion { lambda } => write!(f, "diffusion({lambda})"),
            Self::Geometric { gamma } => write!(f, "geometric({gamma})"),
            Self::Custom => f.write_str("custom"),
        }
    }
}

/// Truncated coefficients `α_0..=α_{k_max}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSeries {
    coeffs: Vec<f64>,
    kind: SeriesKind,
}

impl CoefficientSeries {
    /// A user supplied sequence; needs at least two terms.
    pub fn custom(coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() < 2 {
            return Err(Error::Domain(
                "a coefficient series needs k_max >= 1".into(),
            ));
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::Domain("coefficients must be finite".into()));
        }
        Ok(Self {
            coeffs,
            kind: SeriesKind::Custom,
        })
    }

    /// Parses a JSON array such as `[1, 0.5, 0.25]`.
    pub fn from_json(text: &str) -> Result<Self> {
        let coeffs: Vec<f64> = serde_json::from_str(text)?;
        Self::custom(coeffs)
    }

    /// `exp(λW)`: `α_k = λ^k / k!`.
    pub fn diffusion(lambda: f64, k_max: usize) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::Domain(format!(
                "diffusion needs lambda > 0, got {lambda}"
            )));
        }
        check_k_max(k_max)?;
        let mut coeffs = Vec::with_capacity(k_max + 1);
        let mut term = 1.0;
        coeffs.push(term);
        for k in 1..=k_max {
            term *= lambda / k as f64;
            coeffs.push(term);
        }
        Ok(Self {
            coeffs,
            kind: SeriesKind::Diffusion { lambda },
        })
    }

    /// `(I - γW)^{-1}`: `α_k = γ^k`.
    pub fn geometric(gamma: f64, k_max: usize) -> Result<Self> {
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::Domain(format!(
                "geometric needs 0 < gamma < 1, got {gamma}"
            )));
        }
        check_k_max(k_max)?;
        let coeffs = (0..=k_max as i32).map(|k| gamma.powi(k)).collect();
        Ok(Self {
            coeffs,
            kind: SeriesKind::Geometric { gamma },
        })
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn k_max(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn kind(&self) -> SeriesKind {
        self.kind
    }

    pub fn label(&self) -> String {
        self.kind.to_string()
    }

    /// `c · α`, keeping the label only when it still describes the sequence.
    pub fn scaled(&self, c: f64) -> Self {
        let kind = if c == 1.0 {
            self.kind
        } else {
            SeriesKind::Custom
        };
        Self {
            coeffs: self.coeffs.iter().map(|a| a * c).collect(),
            kind,
        }
    }
}

fn check_k_max(k_max: usize) -> Result<()> {
    if k_max == 0 {
        Err(Error::Domain("k_max must be at least 1".into()))
    } else {
        Ok(())
    }
}

/// Per-step deposit weights `f(0..=k_max)` for stitching degree `l`.
/// `f(p)` is zero for every `p > k_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModulationFunction {
    values: Vec<f64>,
    degree: usize,
}

impl ModulationFunction {
    pub fn new(values: Vec<f64>, degree: usize) -> Result<Self> {
        if values.is_empty() || degree == 0 {
            return Err(Error::Domain(
                "modulation needs at least one value and degree >= 1".into(),
            ));
        }
        Ok(Self { values, degree })
    }

    /// `f = (1, 0, 0, ...)`, which turns every feature matrix into the identity.
    pub fn identity(degree: usize) -> Self {
        Self {
            values: vec![1.0],
            degree: degree.max(1),
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    #[inline]
    pub fn at(&self, p: usize) -> f64 {
        self.values.get(p).copied().unwrap_or(0.0)
    }

    /// Largest `p` with `f(p) != 0`; walks never need to go further.
    pub fn support_end(&self) -> usize {
        self.values.iter().rposition(|&v| v != 0.0).unwrap_or(0)
    }

    /// Reinterprets `f` as a coefficient sequence (for composing roots).
    pub fn as_series(&self) -> Result<CoefficientSeries> {
        let mut coeffs = self.values.clone();
        if coeffs.len() < 2 {
            coeffs.push(0.0);
        }
        CoefficientSeries::custom(coeffs)
    }
}

/// Taylor coefficients of `g(x)^{1/(2l)}` where `g(x) = Σ α_k x^k`.
///
/// With `a = 1/(2l)` and `h = g^a`, matching coefficients of `h' g = a g' h`
/// gives `h_0 = α_0^a` and
/// `h_n = 1/(n α_0) Σ_{k=1..n} (a k - (n - k)) α_k h_{n-k}`.
pub fn root_modulation(alpha: &CoefficientSeries, l: usize) -> Result<ModulationFunction> {
    if l == 0 {
        return Err(Error::Domain("stitching degree must be >= 1".into()));
    }
    let a = alpha.coeffs();
    let a0 = a[0];
    if a0.is_nan() || a0 <= 0.0 {
        return Err(Error::RootExtraction(format!(
            "alpha_0 = {a0} must be positive for a real {}-th root",
            2 * l
        )));
    }
    let exponent = 1.0 / (2 * l) as f64;
    let mut h = Vec::with_capacity(a.len());
    h.push(a0.powf(exponent));
    for n in 1..a.len() {
        let mut acc = 0.0;
        for k in 1..=n {
            acc += (exponent * k as f64 - (n - k) as f64) * a[k] * h[n - k];
        }
        h.push(acc / (n as f64 * a0));
    }
    ModulationFunction::new(h, l)
}

/// Discrete convolution truncated to `len` terms.
pub fn convolve(x: &[f64], y: &[f64], len: usize) -> Vec<f64> {
    (0..len)
        .map(|k| {
            (0..=k)
                .filter(|&p| p < x.len() && k - p < y.len())
                .map(|p| x[p] * y[k - p])
                .sum()
        })
        .collect()
}

/// `max_k |(f^{*2l})_k - α_k|` for `k <= k_max`.
pub fn verify_convolution(f: &ModulationFunction, alpha: &CoefficientSeries, k_max: usize) -> f64 {
    let len = k_max + 1;
    let pair = convolve(f.values(), f.values(), len);
    let mut acc = pair.clone();
    for _ in 1..f.degree() {
        acc = convolve(&acc, &pair, len);
    }
    (0..len)
        .map(|k| (acc[k] - alpha.coeffs().get(k).copied().unwrap_or(0.0)).abs())
        .fold(0.0, f64::max)
}
