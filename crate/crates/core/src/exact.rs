//! Brute-force references: dense truncated kernels, masked errors and Monte
//! Carlo moments of the estimators.

use std::io::Write;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, HopDistances};
use crate::rng;
use crate::series::{CoefficientSeries, SeriesKind};
use crate::sparse::CsrMatrix;
use crate::stitch::{Factor, StitchMode, StitchedEstimator};
use crate::walks::{build_feature_pairs, WalkConfig};

pub const DEFAULT_DENSE_LIMIT: usize = 5000;

/// Tail bounds below this count as converged.
pub const CONVERGED_TAIL: f64 = 1e-12;

/// Trials are reduced in fixed-size chunks so sums do not depend on thread count.
const TRIAL_CHUNK: usize = 64;

const TRIAL_STREAM: u64 = 0x74_7269_616c;

#[derive(Debug, Clone)]
pub struct ExactKernel {
    pub matrix: Array2<f64>,
    pub series: CoefficientSeries,
    /// Frobenius-norm bound on the neglected terms `Σ_{k > k_max} α_k W^k`.
    pub tail_bound: f64,
}

impl ExactKernel {
    pub fn converged(&self) -> bool {
        self.tail_bound < CONVERGED_TAIL
    }

    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        crate::sparse::check_dims("exact apply", self.matrix.ncols(), v.len())?;
        Ok(self.matrix.dot(&ndarray::Array1::from(v.to_vec())).to_vec())
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        for row in self.matrix.rows() {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(out, "{}", line.join(","))?;
        }
        Ok(())
    }
}

pub(crate) fn graph_matrix(g: &Graph) -> CsrMatrix {
    let rows = (0..g.num_nodes())
        .map(|i| {
            let (c, w) = g.neighbors(i);
            c.iter().copied().zip(w.iter().copied()).collect()
        })
        .collect();
    CsrMatrix::from_sorted_rows(g.num_nodes(), rows)
}

pub fn exact_kernel(g: &Graph, alpha: &CoefficientSeries) -> Result<ExactKernel> {
    exact_kernel_with_limit(g, alpha, DEFAULT_DENSE_LIMIT)
}

/// `Σ_{k <= k_max} α_k W^k` by Horner's rule.
pub fn exact_kernel_with_limit(
    g: &Graph,
    alpha: &CoefficientSeries,
    limit: usize,
) -> Result<ExactKernel> {
    let n = g.num_nodes();
    if n > limit {
        return Err(Error::NodeLimit { nodes: n, limit });
    }
    let tail_bound = tail_bound(g, alpha)?;
    let w = graph_matrix(g);
    let coeffs = alpha.coeffs();
    let mut k = Array2::eye(n) * coeffs[coeffs.len() - 1];
    for &a in coeffs.iter().rev().skip(1) {
        k = w.left_mul_dense(k.view())?;
        k.diag_mut().iter_mut().for_each(|d| *d += a);
    }
    Ok(ExactKernel {
        matrix: k,
        series: alpha.clone(),
        tail_bound,
    })
}

/// `√N Σ_{k > k_max} |α_k| ‖W‖_∞^k`, using `‖W^k‖_F <= √N ‖W‖_∞^k` for symmetric `W`.
fn tail_bound(g: &Graph, alpha: &CoefficientSeries) -> Result<f64> {
    let norm = g.max_row_sum();
    let k_max = alpha.k_max();
    let root_n = (g.num_nodes() as f64).sqrt();
    let tail = match alpha.kind() {
        SeriesKind::Diffusion { lambda } => {
            let x = lambda * norm;
            let mut term = (1..=k_max).fold(1.0, |t, k| t * x / k as f64);
            let mut sum = 0.0;
            for k in (k_max + 1)..(k_max + 100_000) {
                term *= x / k as f64;
                sum += term;
                if term <= sum * 1e-17 || term == 0.0 {
                    break;
                }
            }
            sum
        }
        SeriesKind::Geometric { gamma } => {
            let ratio = gamma * norm;
            if ratio >= 1.0 {
                return Err(Error::Convergence(format!(
                    "geometric series with gamma={gamma} diverges for ‖W‖∞={norm}; normalize the graph"
                )));
            }
            ratio.powi(k_max as i32 + 1) / (1.0 - ratio)
        }
        // A user sequence is taken as the complete (polynomial) kernel.
        SeriesKind::Custom => 0.0,
    };
    Ok(root_n * tail)
}

/// Which node pairs enter an error computation.
#[derive(Debug, Clone)]
pub enum PairMask {
    All,
    /// Pairs at least `min_hops` apart (unreachable pairs included).
    MinHops {
        hops: HopDistances,
        min_hops: u32,
    },
}

impl PairMask {
    pub fn min_hops(g: &Graph, min_hops: u32) -> Self {
        Self::MinHops {
            hops: crate::graph::shortest_path_distances(g),
            min_hops,
        }
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        match self {
            Self::All => true,
            Self::MinHops { hops, min_hops } => hops.get(i, j).is_none_or(|h| h >= *min_hops),
        }
    }
}

/// `‖K - K̂‖_F / ‖K‖_F` restricted to pairs accepted by `mask`.
pub fn masked_error(
    exact: &Array2<f64>,
    estimate: &Array2<f64>,
    mask: impl Fn(usize, usize) -> bool,
) -> Result<f64> {
    if exact.dim() != estimate.dim() {
        return Err(Error::Contract(format!(
            "shape {:?} vs {:?}",
            exact.dim(),
            estimate.dim()
        )));
    }
    let (mut num, mut den) = (0.0, 0.0);
    for ((i, j), &k) in exact.indexed_iter() {
        if mask(i, j) {
            let d = k - estimate[[i, j]];
            num += d * d;
            den += k * k;
        }
    }
    if den == 0.0 {
        return Err(Error::UndefinedDenominator);
    }
    Ok((num / den).sqrt())
}

pub fn frobenius_sq(m: &Array2<f64>) -> f64 {
    m.iter().map(|v| v * v).sum()
}

/// Seed of the `t`-th independent estimator draw.
pub fn trial_seed(seed: u64, t: usize) -> u64 {
    rng::derive_seed(seed, &[TRIAL_STREAM, t as u64])
}

/// One dense draw of the degree-`l` estimator.
pub fn draw_estimate(
    g: &Graph,
    cfg: &WalkConfig,
    degree: usize,
    reuse_walks: bool,
) -> Result<Array2<f64>> {
    let pairs = build_feature_pairs(g, cfg, degree, reuse_walks)?;
    StitchedEstimator::from_pairs(&pairs, StitchMode::ExplicitXy)?.materialize()
}

/// Entrywise mean and standard error of the estimator over independent trials.
#[derive(Debug, Clone)]
pub struct EntrywiseStats {
    pub mean: Array2<f64>,
    pub stderr: Array2<f64>,
    pub trials: usize,
}

impl EntrywiseStats {
    /// Fraction of entries with `|mean - target| <= z · stderr`. Entries whose
    /// estimates never vary must match exactly (up to 1e-12).
    pub fn fraction_within(&self, target: &Array2<f64>, z: f64) -> f64 {
        let hits = self
            .mean
            .iter()
            .zip(&self.stderr)
            .zip(target)
            .filter(|((m, s), t)| (*m - *t).abs() <= z * **s + 1e-12)
            .count();
        hits as f64 / target.len() as f64
    }
}

/// Runs `trials` independent estimator draws in parallel and reduces them in
/// a fixed order.
fn reduce_trials<T, F, M>(trials: usize, draw: F, merge: M) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync,
    M: Fn(&mut T, T) + Sync,
{
    let chunks: Vec<Result<Option<T>>> = (0..trials.div_ceil(TRIAL_CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut acc: Option<T> = None;
            for t in c * TRIAL_CHUNK..((c + 1) * TRIAL_CHUNK).min(trials) {
                let x = draw(t)?;
                match acc.as_mut() {
                    Some(a) => merge(a, x),
                    None => acc = Some(x),
                }
            }
            Ok(acc)
        })
        .collect();
    chunks.into_iter().filter_map(|c| c.transpose()).collect()
}

pub fn sample_estimates(
    g: &Graph,
    cfg: &WalkConfig,
    degree: usize,
    reuse_walks: bool,
    trials: usize,
) -> Result<EntrywiseStats> {
    if trials < 2 {
        return Err(Error::Domain("need at least two trials".into()));
    }
    let parts = reduce_trials(
        trials,
        |t| {
            let k = draw_estimate(
                g,
                &cfg.clone().with_seed(trial_seed(cfg.seed, t)),
                degree,
                reuse_walks,
            )?;
            let sq = k.mapv(|v| v * v);
            Ok((k, sq))
        },
        |a, b| {
            a.0 += &b.0;
            a.1 += &b.1;
        },
    )?;
    let n = g.num_nodes();
    let (mut sum, mut sum_sq) = (Array2::<f64>::zeros((n, n)), Array2::<f64>::zeros((n, n)));
    for (s, q) in parts {
        sum += &s;
        sum_sq += &q;
    }
    let t = trials as f64;
    let mean = &sum / t;
    let var = ((&sum_sq / t) - mean.mapv(|m| m * m)).mapv(|v| v.max(0.0) * t / (t - 1.0));
    let stderr = var.mapv(|v| (v / t).sqrt());
    Ok(EntrywiseStats {
        mean,
        stderr,
        trials,
    })
}

/// MC estimate of `‖E[X_1²]‖²_F - ‖K‖²_F` for degree 2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SquareMomentPrediction {
    pub prediction: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MseReport {
    pub mse: f64,
    pub mse_stderr: f64,
    pub trials: usize,
    /// Only for degree 2.
    pub square_moment: Option<SquareMomentPrediction>,
}

impl MseReport {
    /// `(empirical - predicted, combined standard error)`.
    pub fn identity_gap(&self) -> Option<(f64, f64)> {
        self.square_moment.map(|p| {
            (
                self.mse - p.prediction,
                (self.mse_stderr.powi(2) + p.stderr.powi(2)).sqrt(),
            )
        })
    }
}

/// Empirical `E‖K̂ - K‖²_F` over independent draws. For degree 2 it also
/// estimates `‖E[X_1²]‖²_F - ‖K‖²_F` with `X_1 = K_1^(1) (K_2^(1))ᵀ`, using the
/// unbiased pairwise estimator of `‖E[X_1²]‖²_F`.
pub fn empirical_mse(
    g: &Graph,
    alpha: &CoefficientSeries,
    degree: usize,
    cfg: &WalkConfig,
    trials: usize,
) -> Result<MseReport> {
    if trials < 2 {
        return Err(Error::Domain("need at least two trials".into()));
    }
    let exact = exact_kernel(g, alpha)?.matrix;
    let k_norm = frobenius_sq(&exact);
    let draws: Vec<(f64, Option<Array2<f64>>)> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let trial_cfg = cfg.clone().with_seed(trial_seed(cfg.seed, t));
            let pairs = build_feature_pairs(g, &trial_cfg, degree, false)?;
            let est =
                StitchedEstimator::from_pairs(&pairs, StitchMode::ExplicitXy)?.materialize()?;
            let err = frobenius_sq(&(&est - &exact));
            let square = if degree == 2 {
                let x1 = Factor::sparse(std::sync::Arc::new(pairs[0].first.matrix().clone()))
                    .mul(&Factor::sparse_transposed(std::sync::Arc::new(
                        pairs[0].second.matrix().clone(),
                    )))?
                    .to_dense();
                Some(x1.dot(&x1))
            } else {
                None
            };
            Ok((err, square))
        })
        .collect::<Result<_>>()?;

    let t = trials as f64;
    let errs: Vec<f64> = draws.iter().map(|d| d.0).collect();
    let (mse, mse_stderr) = mean_and_stderr(&errs);

    let square_moment = if degree == 2 {
        let squares: Vec<&Array2<f64>> = draws.iter().filter_map(|d| d.1.as_ref()).collect();
        let n = g.num_nodes();
        let mut sum = Array2::<f64>::zeros((n, n));
        let mut self_terms = 0.0;
        for y in &squares {
            sum += *y;
            self_terms += frobenius_sq(y);
        }
        // (‖Σ Y_t‖² - Σ ‖Y_t‖²) / (T(T-1)) is unbiased for ‖E[Y]‖².
        let norm_sq = (frobenius_sq(&sum) - self_terms) / (t * (t - 1.0));
        let mean = &sum / t;
        let proj: Vec<f64> = squares.iter().map(|y| 2.0 * (&mean * *y).sum()).collect();
        let (_, stderr) = mean_and_stderr(&proj);
        Some(SquareMomentPrediction {
            prediction: norm_sq - k_norm,
            stderr,
        })
    } else {
        None
    };
    Ok(MseReport {
        mse,
        mse_stderr,
        trials,
        square_moment,
    })
}

pub(crate) fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}
