//! Small sparse/dense linear algebra kernels used by the problem generators.
//!
//! Nothing here is performance critical beyond the row-dot used in block
//! updates; the direct solvers exist to produce reference solutions.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Compressed sparse row matrix with sorted column indices per row.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from (row, col, value) triplets. Duplicates are summed; explicit
    /// zeros are kept so the sparsity pattern stays what the caller asked for.
    pub fn from_triplets(rows: usize, cols: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut per_row: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); rows];
        for &(r, c, v) in triplets {
            if r >= rows || c >= cols {
                return Err(Error::Contract(format!(
                    "triplet ({r}, {c}) outside {rows}x{cols} matrix"
                )));
            }
            *per_row[r].entry(c).or_insert(0.0) += v;
        }
        let mut indptr = Vec::with_capacity(rows + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for row in per_row {
            for (c, v) in row {
                indices.push(c);
                values.push(v);
            }
            indptr.push(indices.len());
        }
        Ok(Self { rows, cols, indptr, indices, values })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, indptr: vec![0; rows + 1], indices: Vec::new(), values: Vec::new() }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Column indices and values of one row, in ascending column order.
    #[inline]
    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let span = self.indptr[r]..self.indptr[r + 1];
        (&self.indices[span.clone()], &self.values[span])
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (idx, val) = self.row(r);
        match idx.binary_search(&c) {
            Ok(pos) => val[pos],
            Err(_) => 0.0,
        }
    }

    /// Row dot product, accumulated from 0.0 in ascending column order.
    #[inline]
    pub fn row_dot(&self, r: usize, x: &[f64]) -> f64 {
        let (idx, val) = self.row(r);
        let mut acc = 0.0;
        for (&c, &v) in idx.iter().zip(val) {
            acc += v * x[c];
        }
        acc
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.rows).map(|r| self.row_dot(r, x)).collect()
    }

    /// Induced infinity norm (max absolute row sum).
    pub fn norm_inf(&self) -> f64 {
        (0..self.rows)
            .map(|r| self.row(r).1.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.rows).flat_map(move |r| {
            let (idx, val) = self.row(r);
            idx.iter().zip(val).map(move |(&c, &v)| (r, c, v))
        })
    }

    pub fn transpose(&self) -> Self {
        let t: Vec<_> = self.triplets().map(|(r, c, v)| (c, r, v)).collect();
        Self::from_triplets(self.cols, self.rows, &t).expect("transpose of a valid matrix")
    }

    /// Largest |r - c| over stored entries.
    pub fn half_bandwidth(&self) -> usize {
        self.triplets().map(|(r, c, _)| r.abs_diff(c)).max().unwrap_or(0)
    }

    /// Coordinate text format: one `row col value` line per entry, 0-based,
    /// values with 17 significant digits.
    pub fn to_coordinate_text(&self) -> String {
        let mut out = format!("{} {} {}\n", self.rows, self.cols, self.nnz());
        for (r, c, v) in self.triplets() {
            out.push_str(&format!("{r} {c} {v:.16e}\n"));
        }
        out
    }
}

/// Gaussian elimination without pivoting on the band of a square matrix.
///
/// Stable for strictly diagonally dominant matrices, which is the only case
/// the problem generators feed it.
pub fn solve_banded(a: &CsrMatrix, b: &[f64]) -> Result<Vec<f64>> {
    let n = a.rows();
    if a.cols() != n || b.len() != n {
        return Err(Error::Contract("banded solve needs a square system".into()));
    }
    let bw = a.half_bandwidth();
    let width = 2 * bw + 1;
    // band[r * width + (c + bw - r)] holds A[r][c]
    let mut band = vec![0.0; n * width];
    for (r, c, v) in a.triplets() {
        band[r * width + c + bw - r] = v;
    }
    let mut rhs = b.to_vec();
    for k in 0..n {
        let pivot = band[k * width + bw];
        if pivot == 0.0 || !pivot.is_finite() {
            return Err(Error::Construction(format!("zero pivot at row {k}")));
        }
        let last = (k + bw).min(n - 1);
        for r in (k + 1)..=last {
            let f = band[r * width + k + bw - r] / pivot;
            if f == 0.0 {
                continue;
            }
            for c in k..=last {
                band[r * width + c + bw - r] -= f * band[k * width + c + bw - k];
            }
            rhs[r] -= f * rhs[k];
        }
    }
    let mut x = vec![0.0; n];
    for k in (0..n).rev() {
        let last = (k + bw).min(n - 1);
        let mut s = rhs[k];
        for c in (k + 1)..=last {
            s -= band[k * width + c + bw - k] * x[c];
        }
        x[k] = s / band[k * width + bw];
    }
    Ok(x)
}

/// Dense LU with partial pivoting, row-major input.
pub fn solve_dense(n: usize, a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    if a.len() != n * n || b.len() != n {
        return Err(Error::Contract("dense solve dimension mismatch".into()));
    }
    let mut m = a.to_vec();
    let mut rhs = b.to_vec();
    for k in 0..n {
        let (piv, pval) = (k..n)
            .map(|r| (r, m[r * n + k].abs()))
            .fold((k, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        if pval <= 1e-300 {
            return Err(Error::Construction("singular matrix".into()));
        }
        if piv != k {
            for c in 0..n {
                m.swap(k * n + c, piv * n + c);
            }
            rhs.swap(k, piv);
        }
        for r in (k + 1)..n {
            let f = m[r * n + k] / m[k * n + k];
            if f == 0.0 {
                continue;
            }
            for c in k..n {
                m[r * n + c] -= f * m[k * n + c];
            }
            rhs[r] -= f * rhs[k];
        }
    }
    let mut x = vec![0.0; n];
    for k in (0..n).rev() {
        let mut s = rhs[k];
        for c in (k + 1)..n {
            s -= m[k * n + c] * x[c];
        }
        x[k] = s / m[k * n + k];
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tridiag(n: usize) -> CsrMatrix {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 4.0));
            if i > 0 {
                t.push((i, i - 1, -1.0));
            }
            if i + 1 < n {
                t.push((i, i + 1, -1.5));
            }
        }
        CsrMatrix::from_triplets(n, n, &t).unwrap()
    }

    #[test]
    fn banded_and_dense_agree() {
        let a = tridiag(7);
        let b: Vec<f64> = (0..7).map(|i| i as f64 - 2.0).collect();
        let xb = solve_banded(&a, &b).unwrap();
        let mut dense = vec![0.0; 49];
        for (r, c, v) in a.triplets() {
            dense[r * 7 + c] = v;
        }
        let xd = solve_dense(7, &dense, &b).unwrap();
        for (u, v) in xb.iter().zip(&xd) {
            assert!((u - v).abs() < 1e-13);
        }
        let ax = a.matvec(&xb);
        for (u, v) in ax.iter().zip(&b) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn duplicates_are_summed() {
        let a = CsrMatrix::from_triplets(2, 2, &[(0, 1, 1.0), (0, 1, 2.0), (1, 0, -1.0)]).unwrap();
        assert_eq!(a.get(0, 1), 3.0);
        assert_eq!(a.nnz(), 2);
        assert_eq!(a.norm_inf(), 3.0);
    }

    #[test]
    fn out_of_range_triplet_rejected() {
        assert!(CsrMatrix::from_triplets(2, 2, &[(2, 0, 1.0)]).is_err());
    }

    #[test]
    fn coordinate_text_lists_every_entry() {
        let a = tridiag(3);
        let text = a.to_coordinate_text();
        assert_eq!(text.lines().count(), 1 + a.nnz());
        assert!(text.starts_with("3 3 7\n"));
    }
}
