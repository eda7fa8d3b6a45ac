//! End-to-end estimator construction: coefficients → modulation → walks → chain.

use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::graph::Graph;
use crate::series::{root_modulation, CoefficientSeries};
use crate::stitch::{StitchMode, StitchedEstimator};
use crate::termination::TerminationStrategy;
use crate::walks::{build_feature_pairs, FeatureMatrix, FeaturePair, WalkConfig, WalkDiagnostics};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub alpha: CoefficientSeries,
    pub degree: usize,
    pub num_walks: usize,
    pub termination: TerminationStrategy,
    pub seed: u64,
    pub reuse_walks: bool,
    pub mode: StitchMode,
    pub max_length_cap: Option<usize>,
}

impl EstimatorConfig {
    pub fn new(
        alpha: CoefficientSeries,
        degree: usize,
        num_walks: usize,
        termination: TerminationStrategy,
        seed: u64,
    ) -> Self {
        Self {
            alpha,
            degree,
            num_walks,
            termination,
            seed,
            reuse_walks: false,
            mode: StitchMode::ExplicitXy,
            max_length_cap: None,
        }
    }

    pub fn walk_config(&self) -> Result<WalkConfig> {
        let modulation = root_modulation(&self.alpha, self.degree)?;
        let mut cfg = WalkConfig::new(
            self.num_walks,
            modulation,
            self.termination.clone(),
            self.seed,
        )?;
        cfg.max_length_cap = self.max_length_cap;
        Ok(cfg)
    }
}

#[derive(Debug, Clone)]
pub struct BuiltEstimator {
    pub estimator: StitchedEstimator,
    pub pairs: Vec<FeaturePair>,
    /// Wall-clock time spent sampling walks.
    pub walk_time: Duration,
    pub diagnostics: WalkDiagnostics,
}

impl BuiltEstimator {
    /// Stored entries over all distinct sampled matrices.
    pub fn feature_nnz(&self) -> usize {
        distinct(&self.pairs).iter().map(|m| m.matrix().nnz()).sum()
    }
}

/// Each sampled matrix once, even when slots share one under walk reuse.
fn distinct(pairs: &[FeaturePair]) -> Vec<&Arc<FeatureMatrix>> {
    let mut out: Vec<&Arc<FeatureMatrix>> = Vec::new();
    for m in pairs.iter().flat_map(|p| [&p.first, &p.second]) {
        if !out.iter().any(|seen| Arc::ptr_eq(seen, m)) {
            out.push(m);
        }
    }
    out
}

pub fn build_estimator(g: &Graph, cfg: &EstimatorConfig) -> Result<BuiltEstimator> {
    let walk_cfg = cfg.walk_config()?;
    let start = Instant::now();
    let pairs = build_feature_pairs(g, &walk_cfg, cfg.degree, cfg.reuse_walks)?;
    let walk_time = start.elapsed();
    let mut diagnostics = WalkDiagnostics::default();
    for m in distinct(&pairs) {
        diagnostics.deposits += m.diagnostics.deposits;
        diagnostics.transitions += m.diagnostics.transitions;
        diagnostics.dead_ends += m.diagnostics.dead_ends;
        diagnostics.truncations += m.diagnostics.truncations;
    }
    let estimator = StitchedEstimator::from_pairs(&pairs, cfg.mode)?;
    Ok(BuiltEstimator {
        estimator,
        pairs,
        walk_time,
        diagnostics,
    })
}
