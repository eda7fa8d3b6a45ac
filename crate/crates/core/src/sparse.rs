//! Real-valued CSR matrices with the handful of products the estimators need.

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsrMatrix {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    data: Vec<f64>,
}

impl CsrMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            indptr: vec![0; rows + 1],
            indices: Vec::new(),
            data: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            rows: n,
            cols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            data: vec![1.0; n],
        }
    }

    /// Assembles from per-row `(col, value)` lists that are already sorted by column
    /// and free of duplicates.
    pub fn from_sorted_rows(cols: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        let mut indptr = Vec::with_capacity(rows.len() + 1);
        let nnz = rows.iter().map(Vec::len).sum();
        let mut indices = Vec::with_capacity(nnz);
        let mut data = Vec::with_capacity(nnz);
        indptr.push(0);
        for row in &rows {
            debug_assert!(row.windows(2).all(|w| w[0].0 < w[1].0));
            for &(c, v) in row {
                indices.push(c);
                data.push(v);
            }
            indptr.push(indices.len());
        }
        Self {
            rows: rows.len(),
            cols,
            indptr,
            indices,
            data,
        }
    }

    /// Builds from `(row, col, value)` triplets; duplicates are summed in input order.
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Result<Self> {
        let mut per_row: Vec<Vec<(usize, f64)>> = vec![Vec::new(); rows];
        for &(r, c, v) in triplets {
            if r >= rows || c >= cols {
                return Err(Error::Contract(format!(
                    "triplet ({r}, {c}) outside {rows}x{cols}"
                )));
            }
            per_row[r].push((c, v));
        }
        for row in &mut per_row {
            row.sort_by_key(|&(c, _)| c);
            row.dedup_by(|next, kept| {
                if next.0 == kept.0 {
                    kept.1 += next.1;
                    true
                } else {
                    false
                }
            });
        }
        Ok(Self::from_sorted_rows(cols, per_row))
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.data.len()
    }

    /// Fraction of stored entries.
    pub fn fill(&self) -> f64 {
        if self.rows == 0 || self.cols == 0 {
            0.0
        } else {
            self.nnz() as f64 / (self.rows as f64 * self.cols as f64)
        }
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let span = self.indptr[i]..self.indptr[i + 1];
        (&self.indices[span.clone()], &self.data[span])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        cols.binary_search(&j).map(|p| vals[p]).unwrap_or(0.0)
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.rows).flat_map(move |i| {
            let (cols, vals) = self.row(i);
            cols.iter().zip(vals).map(move |(&j, &v)| (i, j, v))
        })
    }

    pub fn scale(&mut self, c: f64) {
        self.data.iter_mut().for_each(|v| *v *= c);
    }

    pub fn transpose(&self) -> Self {
        let mut counts = vec![0usize; self.cols + 1];
        for &c in &self.indices {
            counts[c + 1] += 1;
        }
        for c in 0..self.cols {
            counts[c + 1] += counts[c];
        }
        let indptr = counts.clone();
        let mut next = counts;
        let mut indices = vec![0; self.nnz()];
        let mut data = vec![0.0; self.nnz()];
        for i in 0..self.rows {
            let (cols, vals) = self.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                let slot = next[c];
                indices[slot] = i;
                data[slot] = v;
                next[c] += 1;
            }
        }
        Self {
            rows: self.cols,
            cols: self.rows,
            indptr,
            indices,
            data,
        }
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.rows, self.cols));
        for (i, j, v) in self.triplets() {
            out[[i, j]] = v;
        }
        out
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dims("matvec", self.cols, x.len())?;
        Ok((0..self.rows)
            .into_par_iter()
            .map(|i| {
                let (cols, vals) = self.row(i);
                cols.iter().zip(vals).map(|(&c, &v)| v * x[c]).sum()
            })
            .collect())
    }

    /// `selfᵀ x` without forming the transpose.
    pub fn matvec_transposed(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dims("transposed matvec", self.rows, x.len())?;
        let mut out = vec![0.0; self.cols];
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let (cols, vals) = self.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                out[c] += v * xi;
            }
        }
        Ok(out)
    }

    /// Sparse product by row-wise accumulation (Gustavson), parallel over rows.
    pub fn matmul(&self, rhs: &CsrMatrix) -> Result<CsrMatrix> {
        check_dims("sparse product", self.cols, rhs.rows)?;
        let width = rhs.cols;
        let rows: Vec<Vec<(usize, f64)>> = (0..self.rows)
            .into_par_iter()
            .map_init(
                || (vec![0.0f64; width], vec![false; width], Vec::<usize>::new()),
                |(acc, seen, touched), i| {
                    let (cols, vals) = self.row(i);
                    for (&k, &a) in cols.iter().zip(vals) {
                        let (rc, rv) = rhs.row(k);
                        for (&j, &b) in rc.iter().zip(rv) {
                            if !seen[j] {
                                seen[j] = true;
                                touched.push(j);
                            }
                            acc[j] += a * b;
                        }
                    }
                    touched.sort_unstable();
                    let row = touched
                        .iter()
                        .filter_map(|&j| {
                            let v = acc[j];
                            acc[j] = 0.0;
                            seen[j] = false;
                            (v != 0.0).then_some((j, v))
                        })
                        .collect();
                    touched.clear();
                    row
                },
            )
            .collect();
        Ok(Self::from_sorted_rows(width, rows))
    }

    /// `self · rhs` with a dense right-hand side.
    pub fn mul_dense(&self, rhs: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        check_dims("sparse-dense product", self.cols, rhs.nrows())?;
        let width = rhs.ncols();
        let mut out = Array2::zeros((self.rows, width));
        out.axis_iter_mut(ndarray::Axis(0))
            .into_par_iter()
            .enumerate()
            .for_each(|(i, mut out_row)| {
                let (cols, vals) = self.row(i);
                for (&k, &a) in cols.iter().zip(vals) {
                    out_row.scaled_add(a, &rhs.row(k));
                }
            });
        Ok(out)
    }

    /// `lhs · self` with a dense left-hand side.
    pub fn left_mul_dense(&self, lhs: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        check_dims("dense-sparse product", lhs.ncols(), self.rows)?;
        let mut out = Array2::zeros((lhs.nrows(), self.cols));
        out.axis_iter_mut(ndarray::Axis(0))
            .into_par_iter()
            .enumerate()
            .for_each(|(r, mut out_row)| {
                let lrow = lhs.row(r);
                for k in 0..self.rows {
                    let a = lrow[k];
                    if a == 0.0 {
                        continue;
                    }
                    let (cols, vals) = self.row(k);
                    for (&j, &b) in cols.iter().zip(vals) {
                        out_row[j] += a * b;
                    }
                }
            });
        Ok(out)
    }
}

pub(crate) fn check_dims(op: &str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Contract(format!(
            "{op}: inner dimension {expected} does not match {got}"
        )))
    }
}
