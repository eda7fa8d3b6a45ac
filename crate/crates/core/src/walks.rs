//! Random-walk feature matrices.
//!
//! Row `i` of a [`FeatureMatrix`] is the feature vector `φ_f(i)`: from node `i`
//! we launch `m` walks, each with a pre-sampled length `s`. At step `k` a walk
//! holding `load` deposits `load · f(k) / τ(k)` on its current node, then
//! moves to a uniform neighbour `v` and multiplies its load by
//! `deg(current) · W[current, v]`. Rows are averaged over the `m` walks.
//!
//! Every walk draws from its own stream derived from
//! `(seed, slot, node, walk)`, so output is bit-identical for any thread count.

use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::rng;
use crate::series::ModulationFunction;
use crate::sparse::CsrMatrix;
use crate::termination::TerminationStrategy;

/// Stream tag separating the inline-termination sampler from the main one.
const LEGACY_STREAM: u64 = 0xa1_6011;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalkConfig {
    pub num_walks: usize,
    pub modulation: ModulationFunction,
    pub termination: TerminationStrategy,
    pub seed: u64,
    /// Hard bound on walk length; `None` means ten times the mean length (at least 10).
    pub max_length_cap: Option<usize>,
}

impl WalkConfig {
    pub fn new(
        num_walks: usize,
        modulation: ModulationFunction,
        termination: TerminationStrategy,
        seed: u64,
    ) -> Result<Self> {
        if num_walks == 0 {
            return Err(Error::Domain("number of walks must be at least 1".into()));
        }
        Ok(Self {
            num_walks,
            modulation,
            termination,
            seed,
            max_length_cap: None,
        })
    }

    pub fn with_cap(mut self, cap: usize) -> Self {
        self.max_length_cap = Some(cap);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn effective_cap(&self) -> usize {
        self.max_length_cap
            .unwrap_or_else(|| ((10.0 * self.termination.mean_length()).ceil() as usize).max(10))
    }

    /// Fingerprint of everything that determines the sampled matrices.
    pub fn config_hash(&self) -> u64 {
        let mut words = vec![
            self.num_walks as u64,
            self.modulation.degree() as u64,
            self.effective_cap() as u64,
        ];
        words.extend(self.modulation.values().iter().map(|v| v.to_bits()));
        words.extend(self.termination.to_string().bytes().map(u64::from));
        let k = self.termination.max_length().unwrap_or(64).min(4096);
        words.extend((0..=k).map(|i| self.termination.survival_unchecked(i).to_bits()));
        rng::derive_seed(self.seed, &words)
    }
}

/// Event counts gathered while sampling.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WalkDiagnostics {
    /// Load deposits made (before merging repeated nodes).
    pub deposits: u64,
    pub transitions: u64,
    /// Walks that reached a node without neighbours before their sampled length.
    pub dead_ends: u64,
    /// Walks cut short by the length cap.
    pub truncations: u64,
}

#[derive(Debug, Default)]
struct AtomicDiagnostics {
    deposits: AtomicU64,
    transitions: AtomicU64,
    dead_ends: AtomicU64,
    truncations: AtomicU64,
}

impl AtomicDiagnostics {
    fn add(&self, d: &WalkDiagnostics) {
        self.deposits.fetch_add(d.deposits, Ordering::Relaxed);
        self.transitions.fetch_add(d.transitions, Ordering::Relaxed);
        self.dead_ends.fetch_add(d.dead_ends, Ordering::Relaxed);
        self.truncations.fetch_add(d.truncations, Ordering::Relaxed);
    }

    fn snapshot(&self) -> WalkDiagnostics {
        WalkDiagnostics {
            deposits: self.deposits.load(Ordering::Relaxed),
            transitions: self.transitions.load(Ordering::Relaxed),
            dead_ends: self.dead_ends.load(Ordering::Relaxed),
            truncations: self.truncations.load(Ordering::Relaxed),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureMeta {
    pub num_walks: usize,
    pub seed: u64,
    pub slot: u64,
    pub config_hash: u64,
}

/// Sparse `N × N` matrix whose rows are random feature vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub meta: FeatureMeta,
    pub diagnostics: WalkDiagnostics,
    matrix: CsrMatrix,
}

#[derive(Serialize, Deserialize)]
struct TripletFile {
    meta: FeatureMeta,
    diagnostics: WalkDiagnostics,
    rows: usize,
    cols: usize,
    triplets: Vec<(usize, usize, f64)>,
}

impl FeatureMatrix {
    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> CsrMatrix {
        self.matrix
    }

    pub fn num_nodes(&self) -> usize {
        self.matrix.nrows()
    }

    /// JSON with a metadata header and `(row, col, value)` triplets.
    pub fn to_json(&self) -> Result<String> {
        let file = TripletFile {
            meta: self.meta,
            diagnostics: self.diagnostics,
            rows: self.matrix.nrows(),
            cols: self.matrix.ncols(),
            triplets: self.matrix.triplets().collect(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: TripletFile = serde_json::from_str(text)?;
        Ok(Self {
            meta: file.meta,
            diagnostics: file.diagnostics,
            matrix: CsrMatrix::from_triplets(file.rows, file.cols, &file.triplets)?,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Per-worker dense accumulator with a list of touched columns.
struct RowAccumulator {
    values: Vec<f64>,
    touched: Vec<usize>,
}

impl RowAccumulator {
    fn new(n: usize) -> Self {
        Self {
            values: vec![0.0; n],
            touched: Vec::new(),
        }
    }

    #[inline]
    fn add(&mut self, node: usize, amount: f64) {
        if self.values[node] == 0.0 {
            self.touched.push(node);
        }
        self.values[node] += amount;
    }

    fn drain_scaled(&mut self, scale: f64) -> Vec<(usize, f64)> {
        self.touched.sort_unstable();
        self.touched.dedup();
        let row = self
            .touched
            .iter()
            .filter_map(|&j| {
                let v = std::mem::take(&mut self.values[j]);
                (v != 0.0).then_some((j, v * scale))
            })
            .collect();
        self.touched.clear();
        row
    }
}

/// Builds one feature matrix (slot 0 of `cfg.seed`).
pub fn build_features(g: &Graph, cfg: &WalkConfig) -> Result<FeatureMatrix> {
    build_features_slot(g, cfg, 0)
}

/// Builds the feature matrix for one slot of a stitched estimator. Different
/// slots draw independent walks from the same master seed.
pub fn build_features_slot(g: &Graph, cfg: &WalkConfig, slot: u64) -> Result<FeatureMatrix> {
    if cfg.num_walks == 0 {
        return Err(Error::Domain("number of walks must be at least 1".into()));
    }
    let n = g.num_nodes();
    let f = &cfg.modulation;
    let cap = cfg.effective_cap();
    let reach = f.support_end().min(cap);
    let weights: Vec<f64> = (0..=reach).map(|k| f.at(k)).collect();
    let inv_tau = cfg.termination.inverse_survival_table(reach);
    let diag = AtomicDiagnostics::default();
    let scale = 1.0 / cfg.num_walks as f64;

    let rows: Vec<Vec<(usize, f64)>> = (0..n)
        .into_par_iter()
        .map_init(
            || RowAccumulator::new(n),
            |acc, start| {
                let mut local = WalkDiagnostics::default();
                for w in 0..cfg.num_walks {
                    let mut rng = rng::stream(cfg.seed, &[slot, start as u64, w as u64]);
                    let sampled = cfg.termination.sample(&mut rng);
                    if sampled > cap && f.support_end() > cap {
                        local.truncations += 1;
                    }
                    let last = sampled.min(reach);
                    walk(
                        g, start, last, &weights, &inv_tau, &mut rng, acc, &mut local,
                    );
                }
                diag.add(&local);
                acc.drain_scaled(scale)
            },
        )
        .collect();

    Ok(FeatureMatrix {
        meta: FeatureMeta {
            num_walks: cfg.num_walks,
            seed: cfg.seed,
            slot,
            config_hash: cfg.config_hash(),
        },
        diagnostics: diag.snapshot(),
        matrix: CsrMatrix::from_sorted_rows(n, rows),
    })
}

/// One walk making at most `last` transitions.
#[allow(clippy::too_many_arguments)]
#[inline]
fn walk<R: Rng>(
    g: &Graph,
    start: usize,
    last: usize,
    weights: &[f64],
    inv_tau: &[f64],
    rng: &mut R,
    acc: &mut RowAccumulator,
    diag: &mut WalkDiagnostics,
) {
    let mut node = start;
    let mut load = 1.0;
    let mut step = 0;
    loop {
        let amount = load * weights[step] * inv_tau[step];
        diag.deposits += 1;
        if amount != 0.0 {
            acc.add(node, amount);
        }
        if step == last {
            return;
        }
        let (nbrs, ws) = g.neighbors(node);
        if nbrs.is_empty() {
            diag.dead_ends += 1;
            return;
        }
        let k = rng.random_range(0..nbrs.len());
        load *= nbrs.len() as f64 * ws[k];
        node = nbrs[k];
        step += 1;
        diag.transitions += 1;
    }
}

/// Regular GRF sampler with per-step Bernoulli halting, kept as an
/// independent reference for the pre-sampled-length path.
///
/// Each walk deposits `load · f(k)`, moves, scales its load by
/// `deg · W / (1 - p_halt)` and then halts with probability `p_halt`.
pub fn build_features_inline_halting(
    g: &Graph,
    modulation: &ModulationFunction,
    p_halt: f64,
    num_walks: usize,
    seed: u64,
) -> Result<FeatureMatrix> {
    if !(p_halt > 0.0 && p_halt < 1.0) || num_walks == 0 {
        return Err(Error::Domain(
            "need p_halt in (0, 1) and at least one walk".into(),
        ));
    }
    let n = g.num_nodes();
    let support = modulation.support_end();
    let diag = AtomicDiagnostics::default();
    let rows: Vec<Vec<(usize, f64)>> = (0..n)
        .into_par_iter()
        .map_init(
            || RowAccumulator::new(n),
            |acc, start| {
                let mut local = WalkDiagnostics::default();
                for w in 0..num_walks {
                    let mut rng = rng::stream(seed, &[LEGACY_STREAM, start as u64, w as u64]);
                    let mut node = start;
                    let mut load = 1.0;
                    let mut step = 0usize;
                    loop {
                        let amount = load * modulation.at(step);
                        local.deposits += 1;
                        if amount != 0.0 {
                            acc.add(node, amount);
                        }
                        // Later deposits would all be zero.
                        if step >= support {
                            break;
                        }
                        step += 1;
                        let (nbrs, ws) = g.neighbors(node);
                        if nbrs.is_empty() {
                            local.dead_ends += 1;
                            break;
                        }
                        let k = rng.random_range(0..nbrs.len());
                        load *= nbrs.len() as f64 / (1.0 - p_halt) * ws[k];
                        node = nbrs[k];
                        local.transitions += 1;
                        if rng.random::<f64>() < p_halt {
                            break;
                        }
                    }
                }
                diag.add(&local);
                acc.drain_scaled(1.0 / num_walks as f64)
            },
        )
        .collect();
    Ok(FeatureMatrix {
        meta: FeatureMeta {
            num_walks,
            seed,
            slot: LEGACY_STREAM,
            config_hash: rng::derive_seed(seed, &[LEGACY_STREAM]),
        },
        diagnostics: diag.snapshot(),
        matrix: CsrMatrix::from_sorted_rows(n, rows),
    })
}

/// The two feature matrices of one stitched factor `K_1 K_2ᵀ`.
#[derive(Debug, Clone)]
pub struct FeaturePair {
    pub first: Arc<FeatureMatrix>,
    pub second: Arc<FeatureMatrix>,
}

/// Samples the `2l` feature matrices of a degree-`l` estimator. With
/// `reuse_walks` a single matrix fills every slot (biased ablation).
pub fn build_feature_pairs(
    g: &Graph,
    cfg: &WalkConfig,
    degree: usize,
    reuse_walks: bool,
) -> Result<Vec<FeaturePair>> {
    if degree == 0 {
        return Err(Error::Domain("stitching degree must be >= 1".into()));
    }
    if cfg.modulation.degree() != degree {
        return Err(Error::Contract(format!(
            "modulation was built for degree {} but degree {degree} was requested",
            cfg.modulation.degree()
        )));
    }
    if reuse_walks {
        let shared = Arc::new(build_features_slot(g, cfg, 0)?);
        return Ok((0..degree)
            .map(|_| FeaturePair {
                first: Arc::clone(&shared),
                second: Arc::clone(&shared),
            })
            .collect());
    }
    (0..degree as u64)
        .map(|i| {
            Ok(FeaturePair {
                first: Arc::new(build_features_slot(g, cfg, 2 * i)?),
                second: Arc::new(build_features_slot(g, cfg, 2 * i + 1)?),
            })
        })
        .collect()
}
