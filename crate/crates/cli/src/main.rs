use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use grfpp::bench::{self, ExperimentSpec, GraphSource, MaskRule, TIMING_WALKS};
use grfpp::exact::exact_kernel;
use grfpp::graph::NormalizationMode;
use grfpp::meshtask::{
    load_mesh, run_normal_prediction, EdgeWeight, NormalMethod, NormalTaskConfig,
};
use grfpp::series::CoefficientSeries;
use grfpp::stitch::StitchMode;
use grfpp::termination::TerminationStrategy;

/// Graph kernel approximation with stitched random-walk features.
#[derive(Parser)]
#[command(name = "grfpp", version)]
struct Cli {
    /// Worker threads (default: all cores). Results do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Master random seed.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a generated graph as an edge list.
    GenGraph(GenGraphArgs),
    /// Dense exact kernel as CSV.
    Exact(ExactArgs),
    /// One estimator draw scored against the exact kernel.
    Estimate(ExperimentArgs),
    /// Error versus number of walks, per degree and termination.
    Sweep(ExperimentArgs),
    /// Walk and stitch time per degree with the halting probability scaled by degree.
    Timing(ExperimentArgs),
    /// Bernoulli termination against mean-matched Poisson termination.
    CompareTermination(ExperimentArgs),
    /// Mask mesh vertex normals and predict them with a kernel.
    NormalPredict(NormalArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args)]
struct OutputArgs {
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,

    /// Output file (default: stdout).
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct GraphArgs {
    /// Edge-list path, or a generator: binary_tree:<depth>,
    /// erdos_renyi:<n>:<p>:<seed>, d_regular:<n>:<d>:<seed>.
    #[arg(long)]
    graph: GraphSource,

    /// none, row_max or sym_degree.
    #[arg(long, default_value = "row_max")]
    normalize: NormalizationMode,

    /// diffusion:<lambda>, geometric:<gamma>, an inline JSON array, or a JSON file.
    #[arg(long, default_value = "diffusion:1")]
    alpha: String,

    /// Number of series terms kept for presets.
    #[arg(long, default_value_t = grfpp::series::DEFAULT_K_MAX)]
    k_max: usize,
}

#[derive(Args)]
struct GenGraphArgs {
    /// binary_tree:<depth>, erdos_renyi:<n>:<p>:<seed> or d_regular:<n>:<d>:<seed>.
    generator: GraphSource,

    #[arg(long, default_value = "none")]
    normalize: NormalizationMode,

    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct ExactArgs {
    #[command(flatten)]
    graph: GraphArgs,

    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    #[command(flatten)]
    graph: GraphArgs,

    /// Stitching degrees, comma separated.
    #[arg(long, value_delimiter = ',')]
    degree: Vec<usize>,

    /// Walks per node, comma separated.
    #[arg(long, value_delimiter = ',')]
    walks: Vec<usize>,

    /// bernoulli:<p>, poisson:<mean> or table:<path>, comma separated.
    #[arg(long, value_delimiter = ',')]
    termination: Vec<TerminationStrategy>,

    /// Independent repetitions per configuration.
    #[arg(long)]
    repetitions: Option<usize>,

    /// Share one walk ensemble across all factors (biased).
    #[arg(long)]
    reuse_walks: bool,

    /// Score only pairs at least this many hops apart.
    #[arg(long)]
    mask_hops: Option<u32>,

    /// explicit, operator or jlt:<r>.
    #[arg(long, default_value = "explicit")]
    mode: StitchMode,

    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Args)]
struct NormalArgs {
    /// Triangle mesh in OBJ format.
    #[arg(long)]
    mesh: PathBuf,

    /// Fraction of vertices whose normals are hidden.
    #[arg(long, default_value_t = 0.8)]
    mask: f64,

    #[arg(long, value_enum, default_value_t = MethodArg::Grfpp)]
    method: MethodArg,

    #[arg(long, default_value_t = 2)]
    degree: usize,

    #[arg(long, default_value_t = 16)]
    walks: usize,

    /// Diffusion widths to try, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "0.8")]
    lambda: Vec<f64>,

    #[arg(long, default_value = "bernoulli:0.1")]
    termination: TerminationStrategy,

    #[arg(long, default_value = "unit")]
    edge_weight: EdgeWeight,

    #[arg(long, default_value = "sym_degree")]
    normalize: NormalizationMode,

    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Exact,
    Grf,
    Grfpp,
}

impl From<MethodArg> for NormalMethod {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Exact => Self::Exact,
            MethodArg::Grf => Self::Grf,
            MethodArg::Grfpp => Self::GrfPlusPlus,
        }
    }
}

#[derive(Serialize)]
struct NormalRecord {
    mesh: String,
    vertices: usize,
    method: String,
    lambda: f64,
    degree: usize,
    num_walks: usize,
    termination: String,
    mask_fraction: f64,
    masked: usize,
    seed: u64,
    mean_cosine: f64,
    zero_predictions: usize,
}

fn parse_alpha(spec: &str, k_max: usize) -> Result<CoefficientSeries> {
    let number = |s: &str| {
        s.parse::<f64>()
            .with_context(|| format!("bad kernel parameter '{s}'"))
    };
    let series = if let Some(l) = spec.strip_prefix("diffusion:") {
        CoefficientSeries::diffusion(number(l)?, k_max)?
    } else if let Some(g) = spec.strip_prefix("geometric:") {
        CoefficientSeries::geometric(number(g)?, k_max)?
    } else if spec.trim_start().starts_with('[') {
        CoefficientSeries::from_json(spec)?
    } else {
        let text = std::fs::read_to_string(spec)
            .with_context(|| format!("reading coefficients from {spec}"))?;
        CoefficientSeries::from_json(&text)?
    };
    Ok(series)
}

fn sink(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(File::create(p).with_context(|| format!("creating {}", p.display()))?),
        None => Box::new(io::stdout().lock()),
    })
}

fn emit<T: Serialize>(records: &[T], out: &OutputArgs) -> Result<()> {
    let mut w = sink(out.output.as_deref())?;
    match out.format {
        Format::Csv => {
            let mut csv = csv::Writer::from_writer(&mut w);
            for r in records {
                csv.serialize(r)?;
            }
            csv.flush()?;
        }
        Format::Json => {
            serde_json::to_writer_pretty(&mut w, records)?;
            writeln!(w)?;
        }
    }
    Ok(())
}

fn experiment_spec(
    args: &ExperimentArgs,
    seed: u64,
    defaults: (&[usize], &[usize], &str, usize),
) -> Result<ExperimentSpec> {
    let (degrees, walks, term, reps) = defaults;
    let g = &args.graph;
    let mut spec = ExperimentSpec::new(g.graph.clone(), parse_alpha(&g.alpha, g.k_max)?);
    spec.normalization = g.normalize;
    spec.degrees = if args.degree.is_empty() {
        degrees.to_vec()
    } else {
        args.degree.clone()
    };
    spec.walks = if args.walks.is_empty() {
        walks.to_vec()
    } else {
        args.walks.clone()
    };
    spec.terminations = if args.termination.is_empty() {
        vec![term.parse()?]
    } else {
        args.termination.clone()
    };
    spec.repetitions = args.repetitions.unwrap_or(reps);
    spec.seed = seed;
    spec.reuse_walks = args.reuse_walks;
    spec.mask = args.mask_hops.map_or(MaskRule::All, MaskRule::MinHops);
    spec.stitch = match args.mode {
        StitchMode::Jlt { r, .. } => StitchMode::Jlt { r, seed },
        other => other,
    };
    spec.output = args.out.output.clone();
    Ok(spec)
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    let seed = cli.seed;
    match cli.command {
        Command::GenGraph(args) => {
            let GraphSource::Generated { .. } = args.generator else {
                bail!("gen-graph needs a generator such as binary_tree:6, not a file path");
            };
            let g = args.generator.load(args.normalize)?;
            sink(args.output.as_deref())?.write_all(g.to_edge_list().as_bytes())?;
        }
        Command::Exact(args) => {
            let g = args.graph.graph.load(args.graph.normalize)?;
            let k = exact_kernel(&g, &parse_alpha(&args.graph.alpha, args.graph.k_max)?)?;
            if !k.converged() {
                eprintln!(
                    "warning: truncation tail bound {:.3e}; consider a larger --k-max",
                    k.tail_bound
                );
            }
            k.write_csv(sink(args.output.as_deref())?)?;
        }
        Command::Estimate(args) => {
            let spec = experiment_spec(&args, seed, (&[2], &[16], "bernoulli:0.1", 1))?;
            if spec.degrees.len() * spec.walks.len() * spec.terminations.len() != 1 {
                bail!("estimate takes a single degree, walk count and termination; use sweep for lists");
            }
            emit(&bench::run_error_sweep(&spec)?, &args.out)?;
        }
        Command::Sweep(args) => {
            let spec = experiment_spec(&args, seed, (&[1, 2], &[4, 16, 64], "bernoulli:0.1", 10))?;
            emit(&bench::run_error_sweep(&spec)?, &args.out)?;
        }
        Command::Timing(args) => {
            let spec = experiment_spec(
                &args,
                seed,
                (&[1, 2, 4], &[TIMING_WALKS], "bernoulli:0.01", 5),
            )?;
            emit(&bench::run_timing(&spec)?, &args.out)?;
        }
        Command::CompareTermination(args) => {
            let spec = experiment_spec(&args, seed, (&[1, 2], &[16], "bernoulli:0.1", 10))?;
            emit(&bench::run_termination_compare(&spec)?, &args.out)?;
        }
        Command::NormalPredict(args) => {
            let mesh = load_mesh(&args.mesh)
                .with_context(|| format!("loading {}", args.mesh.display()))?;
            let mut records = Vec::new();
            for &lambda in &args.lambda {
                let cfg = NormalTaskConfig {
                    method: args.method.into(),
                    lambda,
                    degree: args.degree,
                    num_walks: args.walks,
                    termination: args.termination.clone(),
                    mask_fraction: args.mask,
                    edge_weight: args.edge_weight,
                    normalization: args.normalize,
                    seed,
                };
                let out = run_normal_prediction(&mesh, &cfg)?;
                let degree = match cfg.method {
                    NormalMethod::Grf => 1,
                    _ => cfg.degree,
                };
                records.push(NormalRecord {
                    mesh: args.mesh.display().to_string(),
                    vertices: mesh.num_vertices(),
                    method: cfg.method.to_string(),
                    lambda,
                    degree,
                    num_walks: cfg.num_walks,
                    termination: cfg.termination.to_string(),
                    mask_fraction: cfg.mask_fraction,
                    masked: out.masked.len(),
                    seed,
                    mean_cosine: out.mean_cosine,
                    zero_predictions: out.zero_predictions,
                });
            }
            emit(&records, &args.out)?;
        }
    }
    Ok(())
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
