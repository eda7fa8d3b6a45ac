//! Weighted undirected graphs in compressed sparse row form.
//!
//! A [`Graph`] stores the full symmetric weight matrix `W` (both directions of
//! every edge) together with the unweighted degree of each node, which is what
//! the walk sampler needs for its importance weights.

use std::collections::{BTreeMap, VecDeque};
use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Maximum number of reseeded attempts when a random draw comes out disconnected.
pub const MAX_GENERATION_RETRIES: u64 = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    num_nodes: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    weights: Vec<f64>,
    degree: Vec<usize>,
}

/// How edge weights are rescaled before a kernel is built on top of them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizationMode {
    None,
    /// Divide every weight by the largest weighted row sum.
    #[default]
    RowMax,
    /// `w(i,j) / sqrt(d_i d_j)` with weighted degrees `d`.
    SymDegree,
}

impl FromStr for NormalizationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "row_max" | "row-max" => Ok(Self::RowMax),
            "sym_degree" | "sym-degree" => Ok(Self::SymDegree),
            other => Err(Error::Domain(format!("unknown normalization '{other}'"))),
        }
    }
}

impl fmt::Display for NormalizationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::None => "none",
            Self::RowMax => "row_max",
            Self::SymDegree => "sym_degree",
        })
    }
}

impl Graph {
    /// Builds a symmetric graph from undirected edges `(u, v, w)`.
    ///
    /// Each edge is stored in both directions. Zero-weight edges are dropped.
    /// Repeating an edge (in either orientation) is allowed only with the same weight.
    pub fn from_edges<I>(num_nodes: usize, edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize, f64)>,
    {
        if num_nodes == 0 {
            return Err(Error::Domain("graph must have at least one node".into()));
        }
        let mut undirected: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for (u, v, w) in edges {
            check_edge(num_nodes, u, v, w)?;
            if w == 0.0 {
                continue;
            }
            let key = (u.min(v), u.max(v));
            if let Some(prev) = undirected.insert(key, w) {
                if prev != w {
                    return Err(Error::Domain(format!(
                        "edge ({u}, {v}) given with conflicting weights {prev} and {w}"
                    )));
                }
            }
        }

        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); num_nodes];
        for (&(a, b), &w) in &undirected {
            rows[a].push((b, w));
            if a != b {
                rows[b].push((a, w));
            }
        }
        Ok(Self::from_rows(rows))
    }

    fn from_rows(mut rows: Vec<Vec<(usize, f64)>>) -> Self {
        let num_nodes = rows.len();
        let mut row_offsets = Vec::with_capacity(num_nodes + 1);
        let mut col_indices = Vec::new();
        let mut weights = Vec::new();
        let mut degree = Vec::with_capacity(num_nodes);
        row_offsets.push(0);
        for row in &mut rows {
            row.sort_by_key(|&(c, _)| c);
            degree.push(row.len());
            for &(c, w) in row.iter() {
                col_indices.push(c);
                weights.push(w);
            }
            row_offsets.push(col_indices.len());
        }
        Self {
            num_nodes,
            row_offsets,
            col_indices,
            weights,
            degree,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    /// Number of stored (directed) entries of `W`.
    pub fn nnz(&self) -> usize {
        self.col_indices.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Unweighted degree vector.
    pub fn degrees(&self) -> &[usize] {
        &self.degree
    }

    pub fn degree(&self, node: usize) -> usize {
        self.degree[node]
    }

    /// Neighbour ids and matching weights of `node`, sorted by id.
    pub fn neighbors(&self, node: usize) -> (&[usize], &[f64]) {
        let span = self.row_offsets[node]..self.row_offsets[node + 1];
        (&self.col_indices[span.clone()], &self.weights[span])
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        let (cols, ws) = self.neighbors(i);
        match cols.binary_search(&j) {
            Ok(pos) => ws[pos],
            Err(_) => 0.0,
        }
    }

    /// Each undirected edge once, as `(u, v, w)` with `u <= v`.
    pub fn undirected_edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.num_nodes).flat_map(move |i| {
            let (cols, ws) = self.neighbors(i);
            cols.iter()
                .zip(ws)
                .filter(move |(&j, _)| j >= i)
                .map(move |(&j, &w)| (i, j, w))
        })
    }

    pub fn weighted_row_sums(&self) -> Vec<f64> {
        (0..self.num_nodes)
            .map(|i| self.neighbors(i).1.iter().sum())
            .collect()
    }

    /// `‖W‖_∞`, the largest weighted row sum.
    pub fn max_row_sum(&self) -> f64 {
        self.weighted_row_sums().into_iter().fold(0.0, f64::max)
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.num_nodes).all(|i| {
            let (cols, ws) = self.neighbors(i);
            cols.iter()
                .zip(ws)
                .all(|(&j, &w)| w > 0.0 && self.weight(j, i) == w)
        }) && (0..self.num_nodes).all(|i| self.degree[i] == self.neighbors(i).0.len())
    }

    pub fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.num_nodes];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = queue.pop_front() {
            for &v in self.neighbors(u).0 {
                if !seen[v] {
                    seen[v] = true;
                    count += 1;
                    queue.push_back(v);
                }
            }
        }
        count == self.num_nodes
    }

    /// Returns a copy with rescaled weights. The sparsity pattern is unchanged.
    pub fn normalized(&self, mode: NormalizationMode) -> Self {
        let mut out = self.clone();
        match mode {
            NormalizationMode::None => {}
            NormalizationMode::RowMax => {
                let max = self.max_row_sum();
                if max > 0.0 {
                    out.weights.iter_mut().for_each(|w| *w /= max);
                }
            }
            NormalizationMode::SymDegree => {
                let d = self.weighted_row_sums();
                for i in 0..self.num_nodes {
                    for k in self.row_offsets[i]..self.row_offsets[i + 1] {
                        let j = self.col_indices[k];
                        out.weights[k] = self.weights[k] / (d[i] * d[j]).sqrt();
                    }
                }
            }
        }
        out
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut w = Array2::zeros((self.num_nodes, self.num_nodes));
        for i in 0..self.num_nodes {
            let (cols, ws) = self.neighbors(i);
            for (&j, &v) in cols.iter().zip(ws) {
                w[[i, j]] = v;
            }
        }
        w
    }

    /// Parses the edge-list text format: a node-count header followed by
    /// `u v [w]` lines. `#` starts a comment.
    pub fn parse_edge_list(text: &str, normalization: NormalizationMode) -> Result<Self> {
        let mut num_nodes: Option<usize> = None;
        let mut edges = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let Some(n) = num_nodes else {
                if fields.len() != 1 {
                    return Err(parse_err(line_no, "expected a node-count header line"));
                }
                let n = fields[0]
                    .parse::<usize>()
                    .map_err(|e| parse_err(line_no, &format!("bad node count: {e}")))?;
                if n == 0 {
                    return Err(Error::Domain("node count must be positive".into()));
                }
                num_nodes = Some(n);
                continue;
            };
            let (u, v, w) = match fields.as_slice() {
                [u, v] => (parse_id(u, line_no)?, parse_id(v, line_no)?, 1.0),
                [u, v, w] => {
                    let w = w
                        .parse::<f64>()
                        .map_err(|e| parse_err(line_no, &format!("bad weight '{w}': {e}")))?;
                    (parse_id(u, line_no)?, parse_id(v, line_no)?, w)
                }
                _ => return Err(parse_err(line_no, "expected 'u v' or 'u v w'")),
            };
            check_edge(n, u, v, w).map_err(|e| match e {
                Error::Domain(msg) => Error::Domain(format!("line {line_no}: {msg}")),
                other => other,
            })?;
            edges.push((u, v, w));
        }
        let n = num_nodes.ok_or_else(|| parse_err(0, "missing node-count header"))?;
        Ok(Self::from_edges(n, edges)?.normalized(normalization))
    }

    pub fn load_edge_list(
        path: impl AsRef<Path>,
        normalization: NormalizationMode,
    ) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse_edge_list(&text, normalization)
    }

    /// Serializes in the edge-list format. Weights use the shortest
    /// round-trip decimal representation, so reloading is lossless.
    pub fn to_edge_list(&self) -> String {
        let mut out = format!("{}\n", self.num_nodes);
        for (u, v, w) in self.undirected_edges() {
            let _ = writeln!(out, "{u} {v} {w}");
        }
        out
    }

    pub fn save_edge_list(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_edge_list())?;
        Ok(())
    }
}

fn check_edge(n: usize, u: usize, v: usize, w: f64) -> Result<()> {
    if u >= n || v >= n {
        return Err(Error::Domain(format!(
            "edge ({u}, {v}) out of range for {n} nodes"
        )));
    }
    if !w.is_finite() || w < 0.0 {
        return Err(Error::Domain(format!(
            "edge ({u}, {v}) has invalid weight {w}"
        )));
    }
    Ok(())
}

fn parse_err(line: usize, msg: &str) -> Error {
    Error::Parse {
        line,
        msg: msg.to_string(),
    }
}

fn parse_id(tok: &str, line: usize) -> Result<usize> {
    tok.parse::<usize>()
        .map_err(|e| parse_err(line, &format!("bad node id '{tok}': {e}")))
}

/// Synthetic graph families used by the experiments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GraphKind {
    ErdosRenyi { n: usize, p: f64, seed: u64 },
    BinaryTree { depth: u32 },
    DRegular { n: usize, d: usize, seed: u64 },
}

/// Generates a connected unit-weight graph. Random draws that come out
/// disconnected are retried with the next seed.
pub fn generate(kind: GraphKind) -> Result<Graph> {
    match kind {
        GraphKind::BinaryTree { depth } => binary_tree(depth),
        GraphKind::ErdosRenyi { n, p, seed } => {
            if n == 0 || !(p > 0.0 && p <= 1.0) {
                return Err(Error::Domain(format!(
                    "erdos_renyi needs n >= 1 and p in (0, 1], got n={n} p={p}"
                )));
            }
            retry_connected(seed, |s| erdos_renyi(n, p, s))
        }
        GraphKind::DRegular { n, d, seed } => {
            if d == 0 || d >= n || (n * d) % 2 != 0 {
                return Err(Error::Domain(format!(
                    "d_regular needs 0 < d < n and n*d even, got n={n} d={d}"
                )));
            }
            retry_connected(seed, |s| d_regular(n, d, s))
        }
    }
}

fn retry_connected(seed: u64, mut draw: impl FnMut(u64) -> Option<Graph>) -> Result<Graph> {
    for attempt in 0..MAX_GENERATION_RETRIES {
        if let Some(g) = draw(seed.wrapping_add(attempt)) {
            if g.is_connected() {
                return Ok(g);
            }
        }
    }
    Err(Error::Generation(format!(
        "no connected draw after {MAX_GENERATION_RETRIES} attempts starting at seed {seed}"
    )))
}

fn erdos_renyi(n: usize, p: f64, seed: u64) -> Option<Graph> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.random::<f64>() < p {
                edges.push((i, j, 1.0));
            }
        }
    }
    Graph::from_edges(n, edges).ok()
}

fn binary_tree(depth: u32) -> Result<Graph> {
    if depth > 24 {
        return Err(Error::Domain(format!(
            "binary tree depth {depth} is too large"
        )));
    }
    let n = (1usize << (depth + 1)) - 1;
    let edges = (1..n).map(|child| ((child - 1) / 2, child, 1.0));
    Graph::from_edges(n, edges)
}

/// Random d-regular simple graph by stub matching with restarts.
fn d_regular(n: usize, d: usize, seed: u64) -> Option<Graph> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    'restart: for _ in 0..1000 {
        let mut stubs: Vec<usize> = (0..n).flat_map(|v| std::iter::repeat_n(v, d)).collect();
        stubs.shuffle(&mut rng);
        let mut adjacency = vec![Vec::<usize>::with_capacity(d); n];
        // Pick a partner for the last stub among compatible ones.
        while let Some(u) = stubs.pop() {
            let candidates: Vec<usize> = (0..stubs.len())
                .filter(|&k| stubs[k] != u && !adjacency[u].contains(&stubs[k]))
                .collect();
            let Some(&k) = candidates.get(rng.random_range(0..candidates.len().max(1))) else {
                continue 'restart;
            };
            let v = stubs.swap_remove(k);
            adjacency[u].push(v);
            adjacency[v].push(u);
        }
        let edges = adjacency
            .iter()
            .enumerate()
            .flat_map(|(u, nb)| {
                nb.iter()
                    .filter(move |&&v| v > u)
                    .map(move |&v| (u, v, 1.0))
            })
            .collect::<Vec<_>>();
        return Graph::from_edges(n, edges).ok();
    }
    None
}

/// Unweighted hop distances between every pair of nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct HopDistances {
    n: usize,
    hops: Vec<u32>,
}

impl HopDistances {
    pub const UNREACHABLE: u32 = u32::MAX;

    /// `None` when `j` is unreachable from `i`.
    pub fn get(&self, i: usize, j: usize) -> Option<u32> {
        match self.hops[i * self.n + j] {
            Self::UNREACHABLE => None,
            h => Some(h),
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.n
    }

    /// Largest finite distance.
    pub fn diameter(&self) -> u32 {
        self.hops
            .iter()
            .copied()
            .filter(|&h| h != Self::UNREACHABLE)
            .max()
            .unwrap_or(0)
    }
}

/// All-pairs hop counts by breadth-first search from each node
/// (same result as Floyd-Warshall on unit weights, in O(N·E)).
pub fn shortest_path_distances(g: &Graph) -> HopDistances {
    let n = g.num_nodes();
    let mut hops = vec![HopDistances::UNREACHABLE; n * n];
    let mut queue = VecDeque::new();
    for src in 0..n {
        let row = &mut hops[src * n..(src + 1) * n];
        row[src] = 0;
        queue.clear();
        queue.push_back(src);
        while let Some(u) = queue.pop_front() {
            let next = row[u] + 1;
            for &v in g.neighbors(u).0 {
                if row[v] == HopDistances::UNREACHABLE {
                    row[v] = next;
                    queue.push_back(v);
                }
            }
        }
    }
    HopDistances { n, hops }
}
