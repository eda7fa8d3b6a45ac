//! Walk-stitching: turning `l` feature pairs into a kernel estimate
//! `K̂ = Π_i K_1^(i) (K_2^(i))ᵀ`.
//!
//! Three ways to use the chain:
//! * [`assemble_xy`] splits it into two factors with `K̂ = X Yᵀ`;
//! * [`project_jlt`] replaces each `K_j^(i)` by a Gaussian down-projection
//!   `K_j^(i) G^(i) / √r` shared within the pair;
//! * [`StitchedEstimator::apply`] multiplies a vector right to left without
//!   ever forming an `N × N` product.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView2};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::sparse::{check_dims, CsrMatrix};
use crate::walks::FeaturePair;

/// Sparse products denser than this are stored dense.
pub const DENSIFY_FILL: f64 = 0.25;

/// Largest `N` for which [`StitchedEstimator::materialize`] builds a dense matrix.
pub const DEFAULT_NODE_LIMIT: usize = 5000;

/// One matrix in a stitched chain.
#[derive(Debug, Clone)]
pub enum Factor {
    /// A sparse matrix, optionally used transposed.
    Sparse {
        matrix: Arc<CsrMatrix>,
        transposed: bool,
    },
    Dense(Arc<Array2<f64>>),
}

impl Factor {
    pub fn sparse(matrix: Arc<CsrMatrix>) -> Self {
        Self::Sparse {
            matrix,
            transposed: false,
        }
    }

    pub fn sparse_transposed(matrix: Arc<CsrMatrix>) -> Self {
        Self::Sparse {
            matrix,
            transposed: true,
        }
    }

    pub fn dense(matrix: Array2<f64>) -> Self {
        Self::Dense(Arc::new(matrix))
    }

    pub fn identity(n: usize) -> Self {
        Self::sparse(Arc::new(CsrMatrix::identity(n)))
    }

    pub fn shape(&self) -> (usize, usize) {
        match self {
            Self::Sparse {
                matrix,
                transposed: false,
            } => (matrix.nrows(), matrix.ncols()),
            Self::Sparse {
                matrix,
                transposed: true,
            } => (matrix.ncols(), matrix.nrows()),
            Self::Dense(d) => d.dim(),
        }
    }

    pub fn is_dense(&self) -> bool {
        matches!(self, Self::Dense(_))
    }

    pub fn transpose(&self) -> Self {
        match self {
            Self::Sparse { matrix, transposed } => Self::Sparse {
                matrix: Arc::clone(matrix),
                transposed: !transposed,
            },
            Self::Dense(d) => Self::dense(d.t().to_owned()),
        }
    }

    /// The sparse matrix in its used orientation.
    fn oriented(&self) -> Option<CsrMatrix> {
        match self {
            Self::Sparse {
                matrix,
                transposed: false,
            } => Some((**matrix).clone()),
            Self::Sparse {
                matrix,
                transposed: true,
            } => Some(matrix.transpose()),
            Self::Dense(_) => None,
        }
    }

    pub fn to_dense(&self) -> Array2<f64> {
        match self {
            Self::Sparse { matrix, transposed } => {
                let d = matrix.to_dense();
                if *transposed {
                    d.reversed_axes()
                } else {
                    d
                }
            }
            Self::Dense(d) => (**d).clone(),
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            Self::Sparse {
                matrix,
                transposed: false,
            } => matrix.matvec(x),
            Self::Sparse {
                matrix,
                transposed: true,
            } => matrix.matvec_transposed(x),
            Self::Dense(d) => {
                check_dims("dense matvec", d.ncols(), x.len())?;
                Ok(d.dot(&Array1::from(x.to_vec())).to_vec())
            }
        }
    }

    /// `self · rhs`. Sparse results above [`DENSIFY_FILL`] become dense.
    pub fn mul(&self, rhs: &Factor) -> Result<Factor> {
        check_dims("factor product", self.shape().1, rhs.shape().0)?;
        match (self, rhs) {
            (Self::Dense(a), Self::Dense(b)) => Ok(Self::dense(a.dot(&**b))),
            (Self::Dense(a), sparse) => {
                let b = sparse.oriented().expect("sparse factor");
                Ok(Self::dense(b.left_mul_dense(a.view())?))
            }
            (sparse, Self::Dense(b)) => {
                let a = sparse.oriented().expect("sparse factor");
                Ok(Self::dense(a.mul_dense(b.view())?))
            }
            (lhs, rhs) => {
                let a = lhs.oriented().expect("sparse factor");
                let b = rhs.oriented().expect("sparse factor");
                let product = a.matmul(&b)?;
                if product.fill() > DENSIFY_FILL {
                    Ok(Self::dense(product.to_dense()))
                } else {
                    Ok(Self::sparse(Arc::new(product)))
                }
            }
        }
    }

    pub fn nnz(&self) -> usize {
        match self {
            Self::Sparse { matrix, .. } => matrix.nnz(),
            Self::Dense(d) => d.len(),
        }
    }
}

/// Product of a sequence of factors; the empty product is the `n × n` identity.
pub fn chain_product(factors: &[Factor], n: usize) -> Result<Factor> {
    let mut iter = factors.iter();
    let Some(first) = iter.next() else {
        return Ok(Factor::identity(n));
    };
    iter.try_fold(first.clone(), |acc, f| acc.mul(f))
}

/// Splits `l` pairs `(A_i, B_i)` into `X`, `Y` with `X Yᵀ = Π A_i B_iᵀ`.
///
/// Even `l`: `X = Π_{i=1..l/2} A_i B_iᵀ`, `Y = Π_{i=l..l/2+1} B_i A_iᵀ`.
/// Odd `l`, middle pair `c = (l+1)/2`:
/// `X = [Π_{i<c} A_i B_iᵀ] A_c`, `Y = [Π_{i=l..c+1} B_i A_iᵀ] B_c`.
pub fn assemble_xy(pairs: &[(Factor, Factor)]) -> Result<(Factor, Factor)> {
    let l = pairs.len();
    if l == 0 {
        return Err(Error::Domain("need at least one factor pair".into()));
    }
    let n = pairs[0].0.shape().0;
    let forward = |range: std::ops::Range<usize>| -> Vec<Factor> {
        range
            .flat_map(|i| [pairs[i].0.clone(), pairs[i].1.transpose()])
            .collect()
    };
    // Pairs in descending order, each as B_i A_iᵀ.
    let backward = |range: std::ops::Range<usize>| -> Vec<Factor> {
        range
            .rev()
            .flat_map(|i| [pairs[i].1.clone(), pairs[i].0.transpose()])
            .collect()
    };
    let half = l / 2;
    if l.is_multiple_of(2) {
        Ok((
            chain_product(&forward(0..half), n)?,
            chain_product(&backward(half..l), n)?,
        ))
    } else {
        let mut x_chain = forward(0..half);
        x_chain.push(pairs[half].0.clone());
        let mut y_chain = backward(half + 1..l);
        y_chain.push(pairs[half].1.clone());
        Ok((chain_product(&x_chain, n)?, chain_product(&y_chain, n)?))
    }
}

/// `n × r` matrix of independent standard normals (ziggurat sampler).
pub fn gaussian_matrix(n: usize, r: usize, seed: u64) -> Array2<f64> {
    let mut rng = rng::stream(seed, &[0x6a6c74]);
    Array2::from_shape_simple_fn((n, r), || StandardNormal.sample(&mut rng))
}

/// `mat · G / √r` for a caller-supplied `G`.
pub fn project_with(mat: &CsrMatrix, gaussian: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let r = gaussian.ncols();
    if r == 0 {
        return Err(Error::Domain(
            "projection dimension must be at least 1".into(),
        ));
    }
    let mut out = mat.mul_dense(gaussian)?;
    out.mapv_inplace(|v| v / (r as f64).sqrt());
    Ok(out)
}

/// Gaussian down-projection to `r` columns. Both members of a pair must use
/// the same `seed`.
pub fn project_jlt(mat: &CsrMatrix, r: usize, seed: u64) -> Result<Array2<f64>> {
    if r == 0 {
        return Err(Error::Domain(
            "projection dimension must be at least 1".into(),
        ));
    }
    project_with(mat, gaussian_matrix(mat.ncols(), r, seed).view())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum StitchMode {
    /// Sparse factors, materialized through `X Yᵀ`.
    #[default]
    ExplicitXy,
    /// Gaussian projection of every factor to `r` columns.
    Jlt { r: usize, seed: u64 },
    /// Sparse factors, used only through matrix-vector products.
    Operator,
}

impl fmt::Display for StitchMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::ExplicitXy => f.write_str("explicit"),
            Self::Jlt { r, .. } => write!(f, "jlt:{r}"),
            Self::Operator => f.write_str("operator"),
        }
    }
}

impl FromStr for StitchMode {
    type Err = Error;

    /// `explicit`, `operator` or `jlt:<r>` (projection seed set separately).
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "explicit" | "explicit_xy" => Ok(Self::ExplicitXy),
            "operator" => Ok(Self::Operator),
            other => match other.strip_prefix("jlt:").map(str::parse::<usize>) {
                Some(Ok(r)) if r > 0 => Ok(Self::Jlt { r, seed: 0 }),
                _ => Err(Error::Domain(format!("unknown stitch mode '{other}'"))),
            },
        }
    }
}

/// A degree-`l` kernel estimator: the chain `K_1^(1), K_2^(1)ᵀ, …, K_1^(l), K_2^(l)ᵀ`.
#[derive(Debug, Clone)]
pub struct StitchedEstimator {
    factors: Vec<Factor>,
    degree: usize,
    mode: StitchMode,
    num_nodes: usize,
    node_limit: usize,
}

impl StitchedEstimator {
    pub fn from_pairs(pairs: &[FeaturePair], mode: StitchMode) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::Domain("need at least one feature pair".into()));
        }
        let num_nodes = pairs[0].first.num_nodes();
        let mut factors = Vec::with_capacity(2 * pairs.len());
        for (i, pair) in pairs.iter().enumerate() {
            let a = Arc::new(pair.first.matrix().clone());
            let b = if Arc::ptr_eq(&pair.first, &pair.second) {
                Arc::clone(&a)
            } else {
                Arc::new(pair.second.matrix().clone())
            };
            match mode {
                StitchMode::ExplicitXy | StitchMode::Operator => {
                    factors.push(Factor::sparse(a));
                    factors.push(Factor::sparse_transposed(b));
                }
                StitchMode::Jlt { r, seed } => {
                    let g = gaussian_matrix(num_nodes, r, rng::derive_seed(seed, &[i as u64]));
                    factors.push(Factor::dense(project_with(&a, g.view())?));
                    factors.push(Factor::dense(project_with(&b, g.view())?.reversed_axes()));
                }
            }
        }
        Self::from_factors(factors, mode)
    }

    /// Wraps an explicit chain of `2l` factors.
    pub fn from_factors(factors: Vec<Factor>, mode: StitchMode) -> Result<Self> {
        if factors.is_empty() || !factors.len().is_multiple_of(2) {
            return Err(Error::Contract(format!(
                "need an even, nonzero number of factors, got {}",
                factors.len()
            )));
        }
        let num_nodes = factors[0].shape().0;
        for w in factors.windows(2) {
            check_dims("factor chain", w[0].shape().1, w[1].shape().0)?;
        }
        if factors.last().unwrap().shape().1 != num_nodes {
            return Err(Error::Contract(
                "factor chain must map N nodes to N nodes".into(),
            ));
        }
        let degree = factors.len() / 2;
        Ok(Self {
            factors,
            degree,
            mode,
            num_nodes,
            node_limit: DEFAULT_NODE_LIMIT,
        })
    }

    pub fn with_node_limit(mut self, limit: usize) -> Self {
        self.node_limit = limit;
        self
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn mode(&self) -> StitchMode {
        self.mode
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    /// The chain as `(K_1^(i), K_2^(i))` pairs.
    pub fn pairs(&self) -> Vec<(Factor, Factor)> {
        self.factors
            .chunks(2)
            .map(|c| (c[0].clone(), c[1].transpose()))
            .collect()
    }

    pub fn assemble_xy(&self) -> Result<(Factor, Factor)> {
        assemble_xy(&self.pairs())
    }

    /// `K̂ v`, multiplying right to left.
    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_dims("apply", self.num_nodes, v.len())?;
        self.factors
            .iter()
            .rev()
            .try_fold(v.to_vec(), |acc, f| f.matvec(&acc))
    }

    /// Dense `K̂`. Refuses graphs above the node limit.
    pub fn materialize(&self) -> Result<Array2<f64>> {
        if self.num_nodes > self.node_limit {
            return Err(Error::NodeLimit {
                nodes: self.num_nodes,
                limit: self.node_limit,
            });
        }
        match self.mode {
            StitchMode::ExplicitXy => {
                let (x, y) = self.assemble_xy()?;
                Ok(x.mul(&y.transpose())?.to_dense())
            }
            StitchMode::Operator | StitchMode::Jlt { .. } => {
                Ok(chain_product(&self.factors, self.num_nodes)?.to_dense())
            }
        }
    }
}
