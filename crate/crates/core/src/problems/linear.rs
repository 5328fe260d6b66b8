//! Linear fixed-point mappings `f(x) = Mx + c`.

use std::sync::Arc;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::fixedpoint::{BlockMap, BlockMapping, FixedPointProblem};
use crate::linalg::{solve_dense, CsrMatrix};

/// Sparsity layout of generated matrices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Structure {
    /// Each row couples to a few uniformly random columns.
    #[default]
    Random,
    /// Block `b` reads only itself and block `b - 1 (mod p)`.
    Ring,
}

#[derive(Debug, Clone)]
pub struct LinearFixedPoint {
    m: CsrMatrix,
    c: Vec<f64>,
    alpha: f64,
    exact: Vec<f64>,
}

impl LinearFixedPoint {
    /// Wraps `M` and `c`, computing `α = ‖M‖_∞` and the exact solution of
    /// `(I - M)x = c`.
    pub fn from_parts(m: CsrMatrix, c: Vec<f64>) -> Result<Self> {
        let n = m.rows();
        if m.cols() != n || c.len() != n {
            return Err(contract("M must be square and match c"));
        }
        let mut dense = vec![0.0; n * n];
        for r in 0..n {
            dense[r * n + r] = 1.0;
        }
        for (r, col, v) in m.triplets() {
            dense[r * n + col] -= v;
        }
        let exact = solve_dense(n, &dense, &c)
            .map_err(|_| Error::Construction("I - M is singular".into()))?;
        let alpha = m.norm_inf();
        Ok(Self { m, c, alpha, exact })
    }

    /// `f(x) = Mx + c` from a dense `M`.
    pub fn dense(m: &[Vec<f64>], c: &[f64]) -> Result<Self> {
        let n = c.len();
        if m.len() != n || m.iter().any(|row| row.len() != n) {
            return Err(contract("M must be n x n with n = len(c)"));
        }
        let trip: Vec<_> = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j, m[i][j])))
            .filter(|t| t.2 != 0.0)
            .collect();
        Self::from_parts(CsrMatrix::from_triplets(n, n, &trip)?, c.to_vec())
    }

    /// Jacobi map of `Ax = b`: `f(x)_i = (b_i - Σ_{j≠i} A_ij x_j) / A_ii`.
    pub fn jacobi(a: &[Vec<f64>], b: &[f64]) -> Result<Self> {
        let n = b.len();
        if a.len() != n || a.iter().any(|row| row.len() != n) {
            return Err(contract("A must be n x n with n = len(b)"));
        }
        let mut trip = Vec::new();
        let mut c = Vec::with_capacity(n);
        for i in 0..n {
            let d = a[i][i];
            if d == 0.0 {
                return Err(Error::Construction(format!("zero diagonal at row {i}")));
            }
            for j in 0..n {
                if j != i && a[i][j] != 0.0 {
                    trip.push((i, j, -a[i][j] / d));
                }
            }
            c.push(b[i] / d);
        }
        Self::from_parts(CsrMatrix::from_triplets(n, n, &trip)?, c)
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.m
    }

    pub fn offset(&self) -> &[f64] {
        &self.c
    }

    /// Induced max-norm of `M`.
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn exact_solution(&self) -> &[f64] {
        &self.exact
    }

    pub fn dim(&self) -> usize {
        self.c.len()
    }

    /// Decomposes into `p` near-equal contiguous blocks.
    pub fn problem(&self, p: usize) -> Result<FixedPointProblem> {
        let blocks = BlockMap::even(self.dim(), p)?;
        let mapping = Arc::new(LinearMap { m: self.m.clone(), c: self.c.clone() });
        let mut problem = FixedPointProblem::new(blocks, mapping)?.with_exact_solution(self.exact.clone())?;
        if self.alpha < 1.0 {
            problem = problem.with_contraction(self.alpha)?;
        }
        Ok(problem)
    }
}

/// Block mapping for `Mx + c`; each row sums in ascending column order from
/// 0.0 and then adds `c`.
#[derive(Debug, Clone)]
pub struct LinearMap {
    m: CsrMatrix,
    c: Vec<f64>,
}

impl BlockMapping for LinearMap {
    fn dim(&self) -> usize {
        self.c.len()
    }

    fn apply_block(&self, blocks: &BlockMap, i: usize, view: &[f64], out: &mut [f64]) {
        for (o, r) in out.iter_mut().zip(blocks.range(i)) {
            *o = self.m.row_dot(r, view) + self.c[r];
        }
    }

    fn reads(&self, blocks: &BlockMap, i: usize) -> Vec<usize> {
        let own = blocks.range(i);
        let mut cols: Vec<usize> = own
            .clone()
            .flat_map(|r| self.m.row(r).0.iter().copied())
            .filter(|c| !own.contains(c))
            .collect();
        cols.sort_unstable();
        cols.dedup();
        cols
    }
}

/// Random sparse `M` with every absolute row sum equal to `alpha`, random `c`
/// in `[-1, 1]`, exact solution by direct solve.
pub fn build_linear(n: usize, p: usize, alpha: f64, seed: u64) -> Result<LinearFixedPoint> {
    build_linear_with(n, p, alpha, seed, Structure::Random)
}

pub fn build_linear_with(
    n: usize,
    p: usize,
    alpha: f64,
    seed: u64,
    structure: Structure,
) -> Result<LinearFixedPoint> {
    if p == 0 || n < p {
        return Err(contract(format!("need n >= p >= 1, got n={n}, p={p}")));
    }
    if !(0.0..1.0).contains(&alpha) {
        return Err(contract(format!("alpha_target {alpha} not in [0, 1)")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let blocks = BlockMap::even(n, p)?;
    let mut trip = Vec::new();
    for r in 0..n {
        let cols: Vec<usize> = match structure {
            Structure::Random => sample(&mut rng, n, n.min(3)).into_vec(),
            Structure::Ring => {
                let b = blocks.owner(r);
                let own = blocks.range(b);
                let prev = blocks.range((b + p - 1) % p);
                let mut cols = vec![rng.gen_range(own.clone())];
                if p > 1 && (r == own.start || rng.gen_bool(0.5)) {
                    cols.push(rng.gen_range(prev));
                }
                cols.sort_unstable();
                cols.dedup();
                cols
            }
        };
        if alpha == 0.0 {
            continue;
        }
        let weights: Vec<f64> = cols.iter().map(|_| rng.gen_range(0.1..1.0)).collect();
        let total: f64 = weights.iter().sum();
        for (c, w) in cols.into_iter().zip(weights) {
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            trip.push((r, c, sign * alpha * w / total));
        }
    }
    let c: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..=1.0)).collect();
    let mut lin = LinearFixedPoint::from_parts(CsrMatrix::from_triplets(n, n, &trip)?, c)?;
    // row sums are alpha up to rounding; report the construction value
    debug_assert!((lin.alpha - alpha).abs() <= 1e-12);
    lin.alpha = alpha;
    Ok(lin)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixedpoint::Norm;

    #[test]
    fn dense_affine_map() {
        let lin = LinearFixedPoint::dense(&[vec![0.5, 0.25], vec![0.0, 0.5]], &[1.0, 1.0]).unwrap();
        assert_eq!(lin.alpha(), 0.75);
        // (I - M) x = c: x_1 = 2, x_0 = (1 + 0.5) / 0.5
        assert_eq!(lin.exact_solution(), &[3.0, 2.0]);
        assert!(LinearFixedPoint::dense(&[vec![1.0]], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn zero_alpha_gives_zero_matrix() {
        let lin = build_linear(6, 2, 0.0, 3).unwrap();
        assert_eq!(lin.matrix().nnz(), 0);
        assert_eq!(lin.exact_solution(), lin.offset());
    }

    #[test]
    fn row_sums_match_alpha() {
        let lin = build_linear(8, 2, 0.5, 11).unwrap();
        assert!((lin.matrix().norm_inf() - 0.5).abs() <= 1e-12);
        for r in 0..8 {
            let s: f64 = lin.matrix().row(r).1.iter().map(|v| v.abs()).sum();
            assert!((s - 0.5).abs() <= 1e-12);
        }
    }

    #[test]
    fn synchronous_error_contracts_by_alpha() {
        let lin = build_linear(8, 2, 0.5, 5).unwrap();
        let prob = lin.problem(2).unwrap();
        let xs = lin.exact_solution().to_vec();
        let err = |x: &[f64]| Norm::Max.of(&x.iter().zip(&xs).map(|(a, b)| a - b).collect::<Vec<_>>());
        let mut x = vec![0.0; 8];
        let mut prev = err(&x);
        for _ in 0..20 {
            x = prob.apply(&x);
            let e = err(&x);
            assert!(e <= 0.5 * prev + 1e-15, "{e} > 0.5 * {prev}");
            prev = e;
        }
    }

    #[test]
    fn ring_blocks_read_only_predecessor() {
        let lin = build_linear_with(12, 4, 0.6, 2, Structure::Ring).unwrap();
        let prob = lin.problem(4).unwrap();
        for i in 0..4 {
            assert_eq!(prob.interfaces().in_neighbors(i), vec![(i + 3) % 4]);
        }
    }

    #[test]
    fn bad_arguments_rejected() {
        assert!(build_linear(2, 3, 0.5, 0).is_err());
        assert!(build_linear(4, 2, 1.0, 0).is_err());
        assert!(LinearFixedPoint::jacobi(&[vec![0.0, 1.0], vec![1.0, 2.0]], &[1.0, 1.0]).is_err());
    }
}
