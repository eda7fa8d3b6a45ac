//! Vertex-normal prediction on triangle meshes: hide a fraction of the
//! normals and reconstruct them as kernel-weighted sums of the visible ones.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;
use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{build_estimator, EstimatorConfig};
use crate::exact::{exact_kernel, ExactKernel};
use crate::graph::{Graph, NormalizationMode};
use crate::rng;
use crate::series::CoefficientSeries;
use crate::stitch::{StitchMode, StitchedEstimator};
use crate::termination::TerminationStrategy;

const MASK_STREAM: u64 = 0x6d61_736b;

pub type Vec3 = [f64; 3];

fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

fn add_to(acc: &mut Vec3, v: Vec3) {
    acc.iter_mut().zip(v).for_each(|(a, b)| *a += b);
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mesh {
    pub positions: Vec<Vec3>,
    /// Unit length.
    pub normals: Vec<Vec3>,
    pub faces: Vec<[usize; 3]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum EdgeWeight {
    #[default]
    Unit,
    InvLength,
}

impl FromStr for EdgeWeight {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unit" => Ok(Self::Unit),
            "inv-length" => Ok(Self::InvLength),
            _ => Err(Error::Domain(format!(
                "unknown edge weight '{s}' (expected unit or inv-length)"
            ))),
        }
    }
}

impl Mesh {
    /// Builds a mesh, renormalizing normals. When `normals` is `None` they
    /// are area-weighted averages of the incident face normals.
    pub fn new(
        positions: Vec<Vec3>,
        normals: Option<Vec<Vec3>>,
        faces: Vec<[usize; 3]>,
    ) -> Result<Self> {
        if positions.is_empty() || faces.is_empty() {
            return Err(Error::Format("mesh has no vertices or no faces".into()));
        }
        let n = positions.len();
        if let Some(bad) = faces.iter().flatten().find(|&&v| v >= n) {
            return Err(Error::Format(format!(
                "face references vertex {bad} but only {n} exist"
            )));
        }
        let raw = normals.unwrap_or_else(|| {
            let mut acc = vec![[0.0; 3]; n];
            for &[a, b, c] in &faces {
                // The cross product's length is twice the face area.
                let fnorm = cross(
                    sub(positions[b], positions[a]),
                    sub(positions[c], positions[a]),
                );
                for v in [a, b, c] {
                    add_to(&mut acc[v], fnorm);
                }
            }
            acc
        });
        if raw.len() != n {
            return Err(Error::Format(format!(
                "{} normals for {n} vertices",
                raw.len()
            )));
        }
        let normals = raw
            .into_iter()
            .enumerate()
            .map(|(i, v)| {
                let len = norm(v);
                if len > 0.0 && len.is_finite() {
                    Ok([v[0] / len, v[1] / len, v[2] / len])
                } else {
                    Err(Error::Format(format!("vertex {i} has a degenerate normal")))
                }
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            positions,
            normals,
            faces,
        })
    }

    pub fn num_vertices(&self) -> usize {
        self.positions.len()
    }

    /// Distinct undirected edges `(i, j)` with `i < j`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut edges: Vec<(usize, usize)> = self
            .faces
            .iter()
            .flat_map(|&[a, b, c]| [(a, b), (b, c), (c, a)])
            .filter(|(i, j)| i != j)
            .map(|(i, j)| (i.min(j), i.max(j)))
            .collect();
        edges.sort_unstable();
        edges.dedup();
        edges
    }

    /// Wavefront OBJ text with one normal per vertex.
    pub fn to_obj(&self) -> String {
        let mut out = String::new();
        for p in &self.positions {
            out.push_str(&format!("v {} {} {}\n", p[0], p[1], p[2]));
        }
        for n in &self.normals {
            out.push_str(&format!("vn {} {} {}\n", n[0], n[1], n[2]));
        }
        for f in &self.faces {
            let (a, b, c) = (f[0] + 1, f[1] + 1, f[2] + 1);
            out.push_str(&format!("f {a}//{a} {b}//{b} {c}//{c}\n"));
        }
        out
    }

    pub fn graph(&self, weight: EdgeWeight, normalization: NormalizationMode) -> Result<Graph> {
        let edges = self.edges().into_iter().map(|(i, j)| {
            let w = match weight {
                EdgeWeight::Unit => 1.0,
                EdgeWeight::InvLength => {
                    1.0 / norm(sub(self.positions[i], self.positions[j])).max(f64::MIN_POSITIVE)
                }
            };
            (i, j, w)
        });
        Ok(Graph::from_edges(self.num_vertices(), edges)?.normalized(normalization))
    }
}

fn parse_floats(tokens: &[&str], line: usize) -> Result<Vec3> {
    if tokens.len() < 3 {
        return Err(Error::Parse {
            line,
            msg: "expected three coordinates".into(),
        });
    }
    let mut out = [0.0; 3];
    for (o, t) in out.iter_mut().zip(tokens) {
        *o = t.parse().map_err(|e| Error::Parse {
            line,
            msg: format!("bad number '{t}': {e}"),
        })?;
    }
    Ok(out)
}

/// Resolves a 1-based (or negative, relative) OBJ index.
fn resolve(tok: &str, count: usize, line: usize) -> Result<usize> {
    let idx: i64 = tok.parse().map_err(|e| Error::Parse {
        line,
        msg: format!("bad index '{tok}': {e}"),
    })?;
    let resolved = if idx > 0 { idx - 1 } else { count as i64 + idx };
    if idx == 0 || resolved < 0 || resolved as usize >= count {
        return Err(Error::Parse {
            line,
            msg: format!("index {idx} out of range (have {count})"),
        });
    }
    Ok(resolved as usize)
}

/// Parses the `v`, `vn` and `f` records of a Wavefront OBJ file; other records
/// are ignored. Face corners may be `v`, `v/vt`, `v/vt/vn` or `v//vn`.
pub fn parse_obj(text: &str) -> Result<Mesh> {
    let mut positions = Vec::new();
    let mut file_normals = Vec::new();
    let mut faces = Vec::new();
    let mut corner_normals: BTreeMap<usize, Vec3> = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let tokens: Vec<&str> = raw
            .split('#')
            .next()
            .unwrap_or("")
            .split_whitespace()
            .collect();
        match tokens.first().copied() {
            Some("v") => positions.push(parse_floats(&tokens[1..], line)?),
            Some("vn") => file_normals.push(parse_floats(&tokens[1..], line)?),
            Some("f") => {
                if tokens.len() != 4 {
                    return Err(Error::Format(format!(
                        "line {line}: only triangular faces are supported"
                    )));
                }
                let mut face = [0; 3];
                for (slot, corner) in face.iter_mut().zip(&tokens[1..]) {
                    let mut parts = corner.split('/');
                    *slot = resolve(parts.next().unwrap_or(""), positions.len(), line)?;
                    if let Some(vn) = parts.nth(1).filter(|s| !s.is_empty()) {
                        let n = file_normals[resolve(vn, file_normals.len(), line)?];
                        add_to(corner_normals.entry(*slot).or_insert([0.0; 3]), n);
                    }
                }
                faces.push(face);
            }
            _ => {}
        }
    }
    let normals = if corner_normals.is_empty() {
        None
    } else {
        if corner_normals.len() != positions.len() {
            return Err(Error::Format("normals given for only some vertices".into()));
        }
        Some(corner_normals.into_values().collect())
    };
    Mesh::new(positions, normals, faces)
}

pub fn load_mesh(path: impl AsRef<Path>) -> Result<Mesh> {
    parse_obj(&std::fs::read_to_string(path)?)
}

/// A unit sphere with `rings` latitude bands and `segments` longitudes, with
/// exact outward normals.
pub fn uv_sphere(rings: usize, segments: usize) -> Result<Mesh> {
    if rings < 2 || segments < 3 {
        return Err(Error::Domain(
            "uv sphere needs rings >= 2 and segments >= 3".into(),
        ));
    }
    let mut positions = vec![[0.0, 0.0, 1.0]];
    for r in 1..rings {
        let theta = std::f64::consts::PI * r as f64 / rings as f64;
        for s in 0..segments {
            let phi = 2.0 * std::f64::consts::PI * s as f64 / segments as f64;
            positions.push([
                theta.sin() * phi.cos(),
                theta.sin() * phi.sin(),
                theta.cos(),
            ]);
        }
    }
    positions.push([0.0, 0.0, -1.0]);
    let south = positions.len() - 1;
    let ring = |r: usize, s: usize| 1 + (r - 1) * segments + s % segments;
    let mut faces = Vec::new();
    for s in 0..segments {
        faces.push([0, ring(1, s), ring(1, s + 1)]);
        faces.push([south, ring(rings - 1, s + 1), ring(rings - 1, s)]);
    }
    for r in 1..rings - 1 {
        for s in 0..segments {
            faces.push([ring(r, s), ring(r + 1, s), ring(r + 1, s + 1)]);
            faces.push([ring(r, s), ring(r + 1, s + 1), ring(r, s + 1)]);
        }
    }
    let normals = positions.clone();
    Mesh::new(positions, Some(normals), faces)
}

/// Anything that can multiply a vector by an `N × N` kernel.
pub trait KernelOperator {
    fn num_nodes(&self) -> usize;
    fn apply(&self, v: &[f64]) -> Result<Vec<f64>>;
}

impl KernelOperator for ExactKernel {
    fn num_nodes(&self) -> usize {
        self.matrix.nrows()
    }

    fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        ExactKernel::apply(self, v)
    }
}

impl KernelOperator for StitchedEstimator {
    fn num_nodes(&self) -> usize {
        StitchedEstimator::num_nodes(self)
    }

    fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        StitchedEstimator::apply(self, v)
    }
}

impl KernelOperator for Array2<f64> {
    fn num_nodes(&self) -> usize {
        self.nrows()
    }

    fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        crate::sparse::check_dims("dense apply", self.ncols(), v.len())?;
        Ok(self.dot(&ndarray::ArrayView1::from(v)).to_vec())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalPrediction {
    pub mean_cosine: f64,
    pub masked: Vec<usize>,
    /// Masked vertices whose prediction was the zero vector (scored 0).
    pub zero_predictions: usize,
}

/// The vertices hidden for a given seed, in increasing order.
pub fn mask_vertices(n: usize, fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Domain(format!(
            "mask fraction must lie in (0, 1), got {fraction}"
        )));
    }
    let count = (fraction * n as f64).floor() as usize;
    let mut rng = rng::stream(seed, &[MASK_STREAM]);
    let mut picked = index::sample(&mut rng, n, count).into_vec();
    picked.sort_unstable();
    Ok(picked)
}

pub fn predict_normals(
    mesh: &Mesh,
    mask_fraction: f64,
    kernel: &dyn KernelOperator,
    seed: u64,
) -> Result<NormalPrediction> {
    let n = mesh.num_vertices();
    crate::sparse::check_dims("normal prediction", n, kernel.num_nodes())?;
    let masked = mask_vertices(n, mask_fraction, seed)?;
    let mut hidden = vec![false; n];
    masked.iter().for_each(|&i| hidden[i] = true);

    let mut predicted = vec![[0.0; 3]; n];
    for c in 0..3 {
        let input: Vec<f64> = (0..n)
            .map(|j| if hidden[j] { 0.0 } else { mesh.normals[j][c] })
            .collect();
        for (p, v) in predicted.iter_mut().zip(kernel.apply(&input)?) {
            p[c] = v;
        }
    }

    let mut zero_predictions = 0;
    let mut total = 0.0;
    for &i in &masked {
        let p = predicted[i];
        let len = norm(p);
        if len > 0.0 && len.is_finite() {
            total += (dot(p, mesh.normals[i]) / len).clamp(-1.0, 1.0);
        } else {
            zero_predictions += 1;
        }
    }
    let mean_cosine = if masked.is_empty() {
        0.0
    } else {
        total / masked.len() as f64
    };
    Ok(NormalPrediction {
        mean_cosine,
        masked,
        zero_predictions,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NormalMethod {
    Exact,
    Grf,
    GrfPlusPlus,
}

impl FromStr for NormalMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(Self::Exact),
            "grf" => Ok(Self::Grf),
            "grfpp" => Ok(Self::GrfPlusPlus),
            _ => Err(Error::Domain(format!(
                "unknown method '{s}' (expected exact, grf or grfpp)"
            ))),
        }
    }
}

impl fmt::Display for NormalMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Exact => "exact",
            Self::Grf => "grf",
            Self::GrfPlusPlus => "grfpp",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalTaskConfig {
    pub method: NormalMethod,
    /// Diffusion width.
    pub lambda: f64,
    /// Stitching degree for `grfpp`; `grf` always uses 1.
    pub degree: usize,
    pub num_walks: usize,
    pub termination: TerminationStrategy,
    pub mask_fraction: f64,
    pub edge_weight: EdgeWeight,
    pub normalization: NormalizationMode,
    pub seed: u64,
}

impl Default for NormalTaskConfig {
    fn default() -> Self {
        Self {
            method: NormalMethod::GrfPlusPlus,
            lambda: 0.8,
            degree: 2,
            num_walks: 16,
            termination: TerminationStrategy::Bernoulli { p_halt: 0.1 },
            mask_fraction: 0.8,
            edge_weight: EdgeWeight::Unit,
            normalization: NormalizationMode::SymDegree,
            seed: 0,
        }
    }
}

/// Builds the mesh graph and the requested kernel, then scores predictions.
/// The same seed masks the same vertices for every method.
pub fn run_normal_prediction(mesh: &Mesh, cfg: &NormalTaskConfig) -> Result<NormalPrediction> {
    let g = mesh.graph(cfg.edge_weight, cfg.normalization)?;
    let alpha = CoefficientSeries::diffusion(cfg.lambda, crate::series::DEFAULT_K_MAX)?;
    let degree = match cfg.method {
        NormalMethod::Exact => {
            return predict_normals(
                mesh,
                cfg.mask_fraction,
                &exact_kernel(&g, &alpha)?,
                cfg.seed,
            )
        }
        NormalMethod::Grf => 1,
        NormalMethod::GrfPlusPlus => cfg.degree,
    };
    let mut est = EstimatorConfig::new(
        alpha,
        degree,
        cfg.num_walks,
        cfg.termination.clone(),
        rng::derive_seed(cfg.seed, &[1]),
    );
    est.mode = StitchMode::Operator;
    let built = build_estimator(&g, &est)?;
    predict_normals(mesh, cfg.mask_fraction, &built.estimator, cfg.seed)
}
