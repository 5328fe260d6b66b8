//! Backward-Euler, centered finite-difference discretization of
//! `∂u/∂t - νΔu + a·∇u = s` on the unit cube with homogeneous Dirichlet
//! boundaries, split into `qx × qy` subdomains in the (x, y)-plane that each
//! span the full z-extent.
//!
//! Unknowns are numbered subdomain by subdomain so every subdomain is one
//! contiguous block. Inside a subdomain the order is lexicographic with x
//! fastest, then y, then z; with a single subdomain this is the natural
//! grid ordering.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::fixedpoint::{BlockMap, BlockMapping, FixedPointProblem, Norm};
use crate::linalg::{solve_banded, CsrMatrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConvDiffConfig {
    /// Interior points per axis; `n = nx³`.
    pub nx: usize,
    pub nu: f64,
    pub velocity: [f64; 3],
    pub source: f64,
    /// Time step; `None` assembles the steady operator `-νΔ + a·∇`.
    pub dt: Option<f64>,
    pub qx: usize,
    pub qy: usize,
}

impl Default for ConvDiffConfig {
    fn default() -> Self {
        Self { nx: 24, nu: 1.0, velocity: [1.0, 1.0, 1.0], source: 1.0, dt: Some(0.1), qx: 1, qy: 1 }
    }
}

impl ConvDiffConfig {
    /// Chooses `qx × qy = p` with `qx ≤ qy` as close to square as possible.
    pub fn with_processes(mut self, p: usize) -> Self {
        let qx = (1..=p).filter(|d| p % d == 0 && d * d <= p).max().unwrap_or(1);
        self.qx = qx;
        self.qy = p / qx;
        self
    }

    pub fn processes(&self) -> usize {
        self.qx * self.qy
    }

    pub fn h(&self) -> f64 {
        1.0 / (self.nx as f64 + 1.0)
    }
}

/// Stencil coefficients, written once so every consumer uses the same
/// floating-point expressions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stencil {
    pub diag: f64,
    /// `minus[d]` couples to the neighbor at lower coordinate along axis d.
    pub minus: [f64; 3],
    pub plus: [f64; 3],
}

impl Stencil {
    pub fn new(cfg: &ConvDiffConfig) -> Self {
        let h = cfg.h();
        let nu = cfg.nu;
        let time = cfg.dt.map_or(0.0, |dt| 1.0 / dt);
        let diag = time + 6.0 * nu / (h * h);
        let mut minus = [0.0; 3];
        let mut plus = [0.0; 3];
        for d in 0..3 {
            minus[d] = -nu / (h * h) - cfg.velocity[d] / (2.0 * h);
            plus[d] = -nu / (h * h) + cfg.velocity[d] / (2.0 * h);
        }
        Self { diag, minus, plus }
    }
}

#[derive(Debug, Clone)]
pub struct ConvDiffProblem {
    config: ConvDiffConfig,
    blocks: BlockMap,
    /// `coords[g]` is the grid point of block-ordered unknown `g`.
    coords: Vec<[usize; 3]>,
    /// `to_block[natural]` is the block-ordered index.
    to_block: Vec<usize>,
    a: CsrMatrix,
    b: Vec<f64>,
    interface: Vec<bool>,
}

fn split(len: usize, parts: usize) -> Vec<std::ops::Range<usize>> {
    let mut out = Vec::with_capacity(parts);
    let mut start = 0;
    for i in 0..parts {
        let sz = len / parts + usize::from(i < len % parts);
        out.push(start..start + sz);
        start += sz;
    }
    out
}

/// Assembles one time step with `u_prev = 0`.
pub fn discretize_convdiff(config: &ConvDiffConfig) -> Result<ConvDiffProblem> {
    ConvDiffProblem::assemble(config, None)
}

impl ConvDiffProblem {
    /// Assembles `A` and `b = u_prev/Δt + s`. `u_prev` is block-ordered.
    pub fn assemble(config: &ConvDiffConfig, u_prev: Option<&[f64]>) -> Result<Self> {
        let cfg = config;
        let nx = cfg.nx;
        if nx == 0 {
            return Err(contract("nx must be positive"));
        }
        if cfg.qx == 0 || cfg.qy == 0 || cfg.qx > nx || cfg.qy > nx {
            return Err(contract(format!(
                "partition {}x{} does not fit a grid with {nx} points per axis",
                cfg.qx, cfg.qy
            )));
        }
        if !(cfg.nu > 0.0) {
            return Err(Error::Construction(format!("diffusion coefficient nu={} must be positive", cfg.nu)));
        }
        if let Some(dt) = cfg.dt {
            if !(dt > 0.0) {
                return Err(Error::Construction(format!("time step dt={dt} must be positive")));
            }
        }
        let h = cfg.h();
        for d in 0..3 {
            if cfg.velocity[d].abs() * h > 2.0 * cfg.nu {
                return Err(Error::Construction(format!(
                    "convection coefficient a[{d}]={} violates |a|·h <= 2ν (h={h}, ν={})",
                    cfg.velocity[d], cfg.nu
                )));
            }
        }
        let st = Stencil::new(cfg);
        let off_sum: f64 = (0..3).map(|d| st.minus[d].abs() + st.plus[d].abs()).sum();
        let strict = cfg.dt.is_some();
        if st.diag < off_sum || (strict && st.diag <= off_sum) {
            return Err(Error::Construction(format!(
                "diagonal coefficient {} does not dominate off-diagonal sum {off_sum}",
                st.diag
            )));
        }

        let n = nx * nx * nx;
        let xs = split(nx, cfg.qx);
        let ys = split(nx, cfg.qy);
        let mut coords = Vec::with_capacity(n);
        let mut sizes = Vec::with_capacity(cfg.qx * cfg.qy);
        for yr in &ys {
            for xr in &xs {
                sizes.push(xr.len() * yr.len() * nx);
                for z in 0..nx {
                    for y in yr.clone() {
                        for x in xr.clone() {
                            coords.push([x, y, z]);
                        }
                    }
                }
            }
        }
        let blocks = BlockMap::from_sizes(&sizes)?;
        let natural = |c: [usize; 3]| c[0] + nx * (c[1] + nx * c[2]);
        let mut to_block = vec![0; n];
        for (g, &c) in coords.iter().enumerate() {
            to_block[natural(c)] = g;
        }

        let mut trip = Vec::with_capacity(7 * n);
        let mut interface = vec![false; n];
        for (g, &c) in coords.iter().enumerate() {
            let owner = blocks.owner(g);
            trip.push((g, g, st.diag));
            for d in 0..3 {
                if c[d] > 0 {
                    let mut nb = c;
                    nb[d] -= 1;
                    let col = to_block[natural(nb)];
                    interface[g] |= blocks.owner(col) != owner;
                    trip.push((g, col, st.minus[d]));
                }
                if c[d] + 1 < nx {
                    let mut nb = c;
                    nb[d] += 1;
                    let col = to_block[natural(nb)];
                    interface[g] |= blocks.owner(col) != owner;
                    trip.push((g, col, st.plus[d]));
                }
            }
        }
        let a = CsrMatrix::from_triplets(n, n, &trip)?;
        let time = cfg.dt.map_or(0.0, |dt| 1.0 / dt);
        let b = match u_prev {
            Some(u) if u.len() != n => return Err(contract("u_prev has wrong length")),
            Some(u) => u.iter().map(|v| v * time + cfg.source).collect(),
            None => vec![cfg.source; n],
        };
        Ok(Self { config: cfg.clone(), blocks, coords, to_block, a, b, interface })
    }

    pub fn config(&self) -> &ConvDiffConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    pub fn blocks(&self) -> &BlockMap {
        &self.blocks
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.a
    }

    pub fn rhs(&self) -> &[f64] {
        &self.b
    }

    pub fn is_interface(&self, g: usize) -> bool {
        self.interface[g]
    }

    pub fn coords(&self, g: usize) -> [usize; 3] {
        self.coords[g]
    }

    /// Block-ordered vector to natural grid ordering.
    pub fn to_natural(&self, x: &[f64]) -> Vec<f64> {
        self.to_block.iter().map(|&g| x[g]).collect()
    }

    pub fn from_natural(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        for (nat, &g) in self.to_block.iter().enumerate() {
            out[g] = x[nat];
        }
        out
    }

    /// The next time step's system, with `u` as the previous solution.
    pub fn next_step(&self, u: &[f64]) -> Result<Self> {
        Self::assemble(&self.config, Some(u))
    }

    /// Hybrid relaxation as a block fixed-point problem.
    pub fn problem(&self) -> Result<FixedPointProblem> {
        let diag = (0..self.dim()).map(|g| self.a.get(g, g)).collect();
        let mapping = HybridRelaxation {
            a: self.a.clone(),
            b: self.b.clone(),
            diag,
            interface: self.interface.clone(),
        };
        FixedPointProblem::new(self.blocks.clone(), Arc::new(mapping))
    }

    /// `‖Ax - b‖_∞` of a block-ordered vector.
    pub fn final_report_residual(&self, x: &[f64]) -> f64 {
        (0..self.dim())
            .map(|r| (self.a.row_dot(r, x) - self.b[r]).abs())
            .fold(0.0, f64::max)
    }

    /// Direct banded solve in natural ordering, returned block-ordered.
    pub fn direct_solve(&self) -> Result<Vec<f64>> {
        let n = self.dim();
        let trip: Vec<_> = self
            .a
            .triplets()
            .map(|(r, c, v)| (self.natural_index(r), self.natural_index(c), v))
            .collect();
        let a_nat = CsrMatrix::from_triplets(n, n, &trip)?;
        let b_nat = self.to_natural(&self.b);
        let x_nat = solve_banded(&a_nat, &b_nat)?;
        Ok(self.from_natural(&x_nat))
    }

    fn natural_index(&self, g: usize) -> usize {
        let c = self.coords[g];
        let nx = self.config.nx;
        c[0] + nx * (c[1] + nx * c[2])
    }
}

/// One local sweep of block `i`: interface unknowns take a Jacobi update
/// from the incoming view, interior unknowns a Gauss-Seidel update using the
/// values already refreshed earlier in the sweep. The defect is the
/// algebraic residual `b - Ax`.
#[derive(Debug, Clone)]
pub struct HybridRelaxation {
    a: CsrMatrix,
    b: Vec<f64>,
    diag: Vec<f64>,
    interface: Vec<bool>,
}

impl BlockMapping for HybridRelaxation {
    fn dim(&self) -> usize {
        self.b.len()
    }

    fn apply_block(&self, blocks: &BlockMap, i: usize, view: &[f64], out: &mut [f64]) {
        let range = blocks.range(i);
        let start = range.start;
        out.copy_from_slice(&view[range.clone()]);
        for r in range {
            let (idx, val) = self.a.row(r);
            let mut s = self.b[r];
            if self.interface[r] {
                for (&c, &v) in idx.iter().zip(val) {
                    if c != r {
                        s -= v * view[c];
                    }
                }
            } else {
                for (&c, &v) in idx.iter().zip(val) {
                    if c != r {
                        s -= v * out[c - start];
                    }
                }
            }
            out[r - start] = s / self.diag[r];
        }
    }

    fn defect_block(&self, blocks: &BlockMap, i: usize, view: &[f64], out: &mut [f64]) {
        for (o, r) in out.iter_mut().zip(blocks.range(i)) {
            *o = self.b[r] - self.a.row_dot(r, view);
        }
    }

    fn reads(&self, blocks: &BlockMap, i: usize) -> Vec<usize> {
        let own = blocks.range(i);
        let mut cols: Vec<usize> = own
            .clone()
            .filter(|&r| self.interface[r])
            .flat_map(|r| self.a.row(r).0.iter().copied())
            .filter(|c| !own.contains(c))
            .collect();
        cols.sort_unstable();
        cols.dedup();
        cols
    }
}

/// `‖Ax - b‖_∞`.
pub fn final_report_residual(problem: &ConvDiffProblem, x: &[f64]) -> f64 {
    problem.final_report_residual(x)
}

/// Max-norm helper used by reports.
pub fn max_norm(v: &[f64]) -> f64 {
    Norm::Max.of(v)
}
