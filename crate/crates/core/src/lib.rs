//! Graph-node kernel approximation with stitched graph random features.
//!
//! A kernel `K = Σ α_k W^k` is split into `2l` independent random-walk
//! feature matrices whose ordered product is an unbiased estimate of `K`.

pub mod bench;
pub mod error;
pub mod estimator;
pub mod exact;
pub mod graph;
pub mod meshtask;
pub mod rng;
pub mod series;
pub mod sparse;
pub mod stitch;
pub mod termination;
pub mod walks;

pub use bench::{
    run_error_sweep, run_termination_compare, run_timing, BenchRecord, ExperimentSpec,
};
pub use error::{Error, Result};
pub use estimator::{build_estimator, BuiltEstimator, EstimatorConfig};
pub use exact::{exact_kernel, masked_error, ExactKernel, PairMask};
pub use graph::{generate, Graph, GraphKind, NormalizationMode};
pub use meshtask::{load_mesh, predict_normals, KernelOperator, Mesh};
pub use series::{root_modulation, CoefficientSeries, ModulationFunction};
pub use sparse::CsrMatrix;
pub use stitch::{StitchMode, StitchedEstimator};
pub use termination::TerminationStrategy;
pub use walks::{build_feature_pairs, build_features, FeatureMatrix, WalkConfig};
