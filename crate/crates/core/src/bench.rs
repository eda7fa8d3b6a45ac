//! Experiment drivers: error-vs-walks sweeps, walk/stitch timing and
//! termination comparisons, emitted as flat records for CSV or JSON.

use std::fmt;
use std::io::Write;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::{Duration, Instant};

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Context, Error, Result};
use crate::estimator::{build_estimator, EstimatorConfig};
use crate::exact::{exact_kernel, masked_error, PairMask};
use crate::graph::{generate, Graph, GraphKind, NormalizationMode};
use crate::rng;
use crate::series::CoefficientSeries;
use crate::stitch::StitchMode;
use crate::termination::TerminationStrategy;

/// Walks used for timing runs.
pub const TIMING_WALKS: usize = 256;

const MEAN_LENGTH_SAMPLES: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum GraphSource {
    Generated { kind: GraphKind },
    EdgeList { path: PathBuf },
}

impl GraphSource {
    pub fn load(&self, normalization: NormalizationMode) -> Result<Graph> {
        match self {
            Self::Generated { kind } => Ok(generate(*kind)?.normalized(normalization)),
            Self::EdgeList { path } => Graph::load_edge_list(path, normalization),
        }
    }
}

impl FromStr for GraphSource {
    type Err = Error;

    /// `binary_tree:<depth>`, `erdos_renyi:<n>:<p>:<seed>`, `d_regular:<n>:<d>:<seed>`,
    /// or else a path to an edge-list file.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let bad = |e: &dyn fmt::Display| Error::Domain(format!("bad graph generator '{s}': {e}"));
        let kind = match parts.as_slice() {
            ["binary_tree", depth] => GraphKind::BinaryTree {
                depth: depth.parse().map_err(|e| bad(&e))?,
            },
            ["erdos_renyi", n, p, seed] => GraphKind::ErdosRenyi {
                n: n.parse().map_err(|e| bad(&e))?,
                p: p.parse().map_err(|e| bad(&e))?,
                seed: seed.parse().map_err(|e| bad(&e))?,
            },
            ["d_regular", n, d, seed] => GraphKind::DRegular {
                n: n.parse().map_err(|e| bad(&e))?,
                d: d.parse().map_err(|e| bad(&e))?,
                seed: seed.parse().map_err(|e| bad(&e))?,
            },
            [name, ..] if ["binary_tree", "erdos_renyi", "d_regular"].contains(name) => {
                return Err(bad(&"wrong number of parameters"))
            }
            _ => {
                return Ok(Self::EdgeList {
                    path: PathBuf::from(s),
                })
            }
        };
        Ok(Self::Generated { kind })
    }
}

impl fmt::Display for GraphSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Generated {
                kind: GraphKind::ErdosRenyi { n, p, seed },
            } => write!(f, "erdos_renyi({n},{p},{seed})"),
            Self::Generated {
                kind: GraphKind::BinaryTree { depth },
            } => write!(f, "binary_tree({depth})"),
            Self::Generated {
                kind: GraphKind::DRegular { n, d, seed },
            } => write!(f, "d_regular({n},{d},{seed})"),
            Self::EdgeList { path } => write!(f, "{}", path.display()),
        }
    }
}

/// Which pairs are scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskRule {
    All,
    MinHops(u32),
}

impl MaskRule {
    pub fn build(&self, g: &Graph) -> PairMask {
        match *self {
            Self::All => PairMask::All,
            Self::MinHops(k) => PairMask::min_hops(g, k),
        }
    }
}

impl fmt::Display for MaskRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::All => f.write_str("all"),
            Self::MinHops(k) => write!(f, "hops>={k}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub graph: GraphSource,
    pub normalization: NormalizationMode,
    pub alpha: CoefficientSeries,
    pub degrees: Vec<usize>,
    pub walks: Vec<usize>,
    pub terminations: Vec<TerminationStrategy>,
    pub repetitions: usize,
    pub seed: u64,
    pub mask: MaskRule,
    pub reuse_walks: bool,
    pub stitch: StitchMode,
    pub output: Option<PathBuf>,
}

impl ExperimentSpec {
    pub fn new(graph: GraphSource, alpha: CoefficientSeries) -> Self {
        Self {
            graph,
            normalization: NormalizationMode::RowMax,
            alpha,
            degrees: vec![1, 2],
            walks: vec![4, 16, 64],
            terminations: vec![TerminationStrategy::Bernoulli { p_halt: 0.1 }],
            repetitions: 10,
            seed: 0,
            mask: MaskRule::All,
            reuse_walks: false,
            stitch: StitchMode::ExplicitXy,
            output: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.repetitions == 0 {
            return Err(Error::Domain("repetitions must be at least 1".into()));
        }
        if self.degrees.is_empty() || self.walks.is_empty() || self.terminations.is_empty() {
            return Err(Error::Domain(
                "degrees, walks and terminations must be non-empty".into(),
            ));
        }
        if self.degrees.contains(&0) || self.walks.contains(&0) {
            return Err(Error::Domain(
                "degrees and walk counts must be positive".into(),
            ));
        }
        Ok(())
    }

    fn estimator_config(
        &self,
        degree: usize,
        walks: usize,
        term: &TerminationStrategy,
        seed: u64,
    ) -> EstimatorConfig {
        let mut cfg = EstimatorConfig::new(self.alpha.clone(), degree, walks, term.clone(), seed);
        cfg.reuse_walks = self.reuse_walks;
        cfg.mode = self.stitch;
        cfg
    }
}

/// One aggregated configuration. Times are per repetition, in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub experiment: String,
    pub graph: String,
    pub num_nodes: usize,
    pub kernel: String,
    pub degree: usize,
    pub num_walks: usize,
    pub termination: String,
    pub reuse_walks: bool,
    pub mask: String,
    pub stitch: String,
    pub repetitions: usize,
    pub seed: u64,
    pub error_mean: f64,
    pub error_std: f64,
    pub walk_time: f64,
    pub stitch_time: f64,
    pub total_time: f64,
    pub nnz_mean: f64,
    pub mean_length: f64,
}

impl BenchRecord {
    /// Seed of repetition `rep`, recomputable from the record alone.
    pub fn repetition_seed(&self, rep: usize) -> u64 {
        repetition_seed(
            self.seed,
            self.degree,
            self.num_walks,
            &self.termination,
            rep,
        )
    }
}

pub fn repetition_seed(
    master: u64,
    degree: usize,
    walks: usize,
    termination: &str,
    rep: usize,
) -> u64 {
    let mut path = vec![degree as u64, walks as u64, rep as u64];
    path.extend(termination.bytes().map(u64::from));
    rng::derive_seed(master, &path)
}

pub fn write_csv<W: Write>(records: &[BenchRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<W: Write>(records: &[BenchRecord], out: W) -> Result<()> {
    serde_json::to_writer_pretty(out, records)?;
    Ok(())
}

/// Result of a single estimator draw scored against the exact kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Trial {
    pub error: f64,
    pub walk_time: Duration,
    pub stitch_time: Duration,
    pub total_time: Duration,
    pub nnz: usize,
}

pub fn run_trial(
    g: &Graph,
    exact: &Array2<f64>,
    mask: &PairMask,
    cfg: &EstimatorConfig,
) -> Result<Trial> {
    let start = Instant::now();
    let built = build_estimator(g, cfg)?;
    let t = Instant::now();
    let estimate = built.estimator.materialize()?;
    let stitch_time = t.elapsed();
    let error = masked_error(exact, &estimate, |i, j| mask.contains(i, j))?;
    Ok(Trial {
        error,
        walk_time: built.walk_time,
        stitch_time,
        total_time: start.elapsed(),
        nnz: built.feature_nnz(),
    })
}

struct Prepared {
    graph: Graph,
    exact: Array2<f64>,
    mask: PairMask,
}

fn prepare(spec: &ExperimentSpec) -> Result<Prepared> {
    spec.validate()?;
    let graph = spec
        .graph
        .load(spec.normalization)
        .context(|| format!("loading {}", spec.graph))?;
    let exact = exact_kernel(&graph, &spec.alpha)
        .context(|| format!("exact {} kernel", spec.alpha.label()))?
        .matrix;
    let mask = spec.mask.build(&graph);
    Ok(Prepared { graph, exact, mask })
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    (
        mean,
        (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt(),
    )
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

fn sampled_mean_length(term: &TerminationStrategy, seed: u64) -> f64 {
    let lens = term.sample_lengths(MEAN_LENGTH_SAMPLES, seed);
    lens.iter().sum::<usize>() as f64 / lens.len() as f64
}

#[allow(clippy::too_many_arguments)]
fn aggregate(
    experiment: &str,
    spec: &ExperimentSpec,
    prep: &Prepared,
    degree: usize,
    walks: usize,
    term: &TerminationStrategy,
    trials: &[Trial],
    time_stat: fn(Vec<f64>) -> f64,
) -> BenchRecord {
    let errors: Vec<f64> = trials.iter().map(|t| t.error).collect();
    let (error_mean, error_std) = mean_std(&errors);
    let secs =
        |f: fn(&Trial) -> Duration| time_stat(trials.iter().map(|t| f(t).as_secs_f64()).collect());
    BenchRecord {
        experiment: experiment.to_string(),
        graph: spec.graph.to_string(),
        num_nodes: prep.graph.num_nodes(),
        kernel: spec.alpha.label(),
        degree,
        num_walks: walks,
        termination: term.to_string(),
        reuse_walks: spec.reuse_walks,
        mask: spec.mask.to_string(),
        stitch: spec.stitch.to_string(),
        repetitions: trials.len(),
        seed: spec.seed,
        error_mean,
        error_std,
        walk_time: secs(|t| t.walk_time),
        stitch_time: secs(|t| t.stitch_time),
        total_time: secs(|t| t.total_time),
        nnz_mean: trials.iter().map(|t| t.nnz as f64).sum::<f64>() / trials.len() as f64,
        mean_length: sampled_mean_length(term, spec.seed),
    }
}

fn mean_of(xs: Vec<f64>) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sweep_one(
    experiment: &str,
    spec: &ExperimentSpec,
    prep: &Prepared,
    degree: usize,
    walks: usize,
    term: &TerminationStrategy,
) -> Result<BenchRecord> {
    let label = term.to_string();
    let trials: Vec<Trial> = (0..spec.repetitions)
        .into_par_iter()
        .map(|rep| {
            let seed = repetition_seed(spec.seed, degree, walks, &label, rep);
            run_trial(
                &prep.graph,
                &prep.exact,
                &prep.mask,
                &spec.estimator_config(degree, walks, term, seed),
            )
        })
        .collect::<Result<_>>()
        .context(|| format!("{experiment}: degree={degree} walks={walks} termination={label}"))?;
    Ok(aggregate(
        experiment, spec, prep, degree, walks, term, &trials, mean_of,
    ))
}

/// Every `(degree, walks, termination)` combination, scored against the exact kernel.
pub fn run_error_sweep(spec: &ExperimentSpec) -> Result<Vec<BenchRecord>> {
    let prep = prepare(spec)?;
    let mut out = Vec::new();
    for &degree in &spec.degrees {
        for &walks in &spec.walks {
            for term in &spec.terminations {
                out.push(sweep_one("error_sweep", spec, &prep, degree, walks, term)?);
            }
        }
    }
    Ok(out)
}

/// Walk and stitch time per degree with the halting probability scaled by the
/// degree, so every degree covers the same expected total walk length. The
/// first termination must be Bernoulli and supplies the base probability.
/// Runs are sequential; one warm-up run per degree is discarded and the
/// reported times are medians over `repetitions`.
pub fn run_timing(spec: &ExperimentSpec) -> Result<Vec<BenchRecord>> {
    let prep = prepare(spec)?;
    let p_base = match spec.terminations[0] {
        TerminationStrategy::Bernoulli { p_halt } => p_halt,
        ref other => {
            return Err(Error::Domain(format!(
                "timing needs a bernoulli base termination, got {other}"
            )))
        }
    };
    let mut out = Vec::new();
    for &degree in &spec.degrees {
        let term = TerminationStrategy::bernoulli(p_base * degree as f64)
            .context(|| format!("timing: scaled halting probability for degree {degree}"))?;
        for &walks in &spec.walks {
            let label = term.to_string();
            let run = |rep: usize| {
                let seed = repetition_seed(spec.seed, degree, walks, &label, rep);
                run_trial(
                    &prep.graph,
                    &prep.exact,
                    &prep.mask,
                    &spec.estimator_config(degree, walks, &term, seed),
                )
            };
            run(usize::MAX).context(|| format!("timing warm-up: degree={degree}"))?;
            let trials: Vec<Trial> = (0..spec.repetitions)
                .map(run)
                .collect::<Result<_>>()
                .context(|| format!("timing: degree={degree} walks={walks}"))?;
            out.push(aggregate(
                "timing", spec, &prep, degree, walks, &term, &trials, median,
            ));
        }
    }
    Ok(out)
}

/// For each Bernoulli termination in the spec, a record for it and one for the
/// Poisson strategy with the same mean length, at every degree and walk count.
pub fn run_termination_compare(spec: &ExperimentSpec) -> Result<Vec<BenchRecord>> {
    let prep = prepare(spec)?;
    let mut out = Vec::new();
    for term in &spec.terminations {
        let TerminationStrategy::Bernoulli { p_halt } = *term else {
            return Err(Error::Domain(format!(
                "termination comparison expects bernoulli strategies, got {term}"
            )));
        };
        let poisson = TerminationStrategy::mean_matched_poisson(p_halt)?;
        for &degree in &spec.degrees {
            for &walks in &spec.walks {
                out.push(sweep_one(
                    "termination_compare",
                    spec,
                    &prep,
                    degree,
                    walks,
                    term,
                )?);
                out.push(sweep_one(
                    "termination_compare",
                    spec,
                    &prep,
                    degree,
                    walks,
                    &poisson,
                )?);
            }
        }
    }
    Ok(out)
}
