//! Fixed-point problems `x = f(x)` split into contiguous blocks, with the
//! distributed residual `r(x) = σ(r_1(x), …, r_p(x))`.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};

/// Partition of `0..n` into `p` contiguous, non-empty, ordered ranges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockMap {
    starts: Vec<usize>,
}

impl BlockMap {
    /// Builds a block map from block lengths.
    pub fn from_sizes(sizes: &[usize]) -> Result<Self> {
        if sizes.is_empty() {
            return Err(contract("at least one block is required"));
        }
        if sizes.iter().any(|&s| s == 0) {
            return Err(contract("blocks must be non-empty"));
        }
        let mut starts = Vec::with_capacity(sizes.len() + 1);
        starts.push(0);
        for s in sizes {
            starts.push(starts.last().unwrap() + s);
        }
        Ok(Self { starts })
    }

    /// `p` blocks of near-equal size; the first `n % p` blocks get one extra.
    pub fn even(n: usize, p: usize) -> Result<Self> {
        if p == 0 || n < p {
            return Err(contract(format!("cannot split n={n} into p={p} non-empty blocks")));
        }
        let sizes: Vec<usize> = (0..p).map(|i| n / p + usize::from(i < n % p)).collect();
        Self::from_sizes(&sizes)
    }

    pub fn count(&self) -> usize {
        self.starts.len() - 1
    }

    pub fn dim(&self) -> usize {
        *self.starts.last().unwrap()
    }

    pub fn range(&self, i: usize) -> Range<usize> {
        self.starts[i]..self.starts[i + 1]
    }

    pub fn len_of(&self, i: usize) -> usize {
        self.starts[i + 1] - self.starts[i]
    }

    /// Block owning global index `g`.
    pub fn owner(&self, g: usize) -> usize {
        debug_assert!(g < self.dim());
        self.starts.partition_point(|&s| s <= g) - 1
    }
}

/// Norm family used by the residual: `l(q)` for `q >= 1`, or the max norm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Norm {
    Lq(f64),
    Max,
}

impl Norm {
    pub const L2: Norm = Norm::Lq(2.0);

    /// Local contribution of a defect block: the q-th power sum for `l(q)`,
    /// the raw maximum for the max norm.
    pub fn local(&self, defect: &[f64]) -> f64 {
        match *self {
            Norm::Max => defect.iter().fold(0.0, |m, d| f64::max(m, d.abs())),
            Norm::Lq(q) if q == 2.0 => defect.iter().map(|d| d * d).sum(),
            Norm::Lq(q) if q == 1.0 => defect.iter().map(|d| d.abs()).sum(),
            Norm::Lq(q) => defect.iter().map(|d| d.abs().powf(q)).sum(),
        }
    }

    /// Partial fold of two local contributions.
    #[inline]
    pub fn combine(&self, a: f64, b: f64) -> f64 {
        match self {
            Norm::Max => f64::max(a, b),
            Norm::Lq(_) => a + b,
        }
    }

    /// Final root taken once on the folded value.
    #[inline]
    pub fn finish(&self, folded: f64) -> f64 {
        match *self {
            Norm::Max => folded,
            Norm::Lq(q) if q == 1.0 => folded,
            Norm::Lq(q) if q == 2.0 => folded.sqrt(),
            Norm::Lq(q) => folded.powf(1.0 / q),
        }
    }

    /// Direct norm of a whole vector.
    pub fn of(&self, v: &[f64]) -> f64 {
        self.finish(self.local(v))
    }
}

impl fmt::Display for Norm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Norm::Max => write!(f, "max"),
            Norm::Lq(q) => write!(f, "l{q}"),
        }
    }
}

impl FromStr for Norm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        if s == "max" || s == "inf" || s == "linf" {
            return Ok(Norm::Max);
        }
        let q: f64 = s
            .strip_prefix('l')
            .and_then(|q| q.parse().ok())
            .ok_or_else(|| Error::Parse(format!("unknown norm `{s}` (expected max or l<q>)")))?;
        if !(q >= 1.0) || !q.is_finite() {
            return Err(Error::Parse(format!("norm order must be >= 1, got {q}")));
        }
        Ok(Norm::Lq(q))
    }
}

impl Serialize for Norm {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Norm {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// How local residuals are measured and folded together.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualSpec {
    pub norm: Norm,
}

impl Default for ResidualSpec {
    fn default() -> Self {
        Self::l2()
    }
}

impl ResidualSpec {
    pub fn new(norm: Norm) -> Self {
        Self { norm }
    }

    pub fn max() -> Self {
        Self { norm: Norm::Max }
    }

    pub fn l2() -> Self {
        Self { norm: Norm::L2 }
    }
}

/// A block-decomposed mapping `f = [f_1 … f_p]`.
///
/// Implementations read the full global vector but must only depend on the
/// entries they report through [`BlockMapping::reads`] plus their own block.
pub trait BlockMapping: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;

    /// Writes `f_i(view)` into `out` (length of block `i`).
    fn apply_block(&self, blocks: &BlockMap, i: usize, view: &[f64], out: &mut [f64]);

    /// Writes the residual defect of block `i` into `out`. Defaults to
    /// `x_i - f_i(x)`.
    fn defect_block(&self, blocks: &BlockMap, i: usize, view: &[f64], out: &mut [f64]) {
        self.apply_block(blocks, i, view, out);
        for (o, x) in out.iter_mut().zip(&view[blocks.range(i)]) {
            *o = x - *o;
        }
    }

    /// Sorted global indices outside block `i` that `f_i` and the defect of
    /// block `i` read.
    fn reads(&self, blocks: &BlockMap, i: usize) -> Vec<usize>;
}

/// Per-block iteration stamps paired with a global vector.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalView {
    pub values: Vec<f64>,
    pub stamps: Vec<u64>,
}

impl GlobalView {
    pub fn new(values: Vec<f64>, stamps: Vec<u64>) -> Self {
        Self { values, stamps }
    }

    /// A view with all stamps zero.
    pub fn unstamped(values: Vec<f64>, p: usize) -> Self {
        Self { values, stamps: vec![0; p] }
    }

    pub fn check(&self, problem: &FixedPointProblem) -> Result<()> {
        if self.values.len() != problem.dim() {
            return Err(contract(format!(
                "view has {} values, problem dimension is {}",
                self.values.len(),
                problem.dim()
            )));
        }
        if self.stamps.len() != problem.block_count() {
            return Err(contract(format!(
                "view has {} stamps, problem has {} blocks",
                self.stamps.len(),
                problem.block_count()
            )));
        }
        Ok(())
    }
}

/// Which sender blocks each block reads, and exactly which indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Interfaces {
    /// `incoming[i]` maps sender block `j` to the sorted global indices of
    /// block `j` that block `i` reads.
    incoming: Vec<BTreeMap<usize, Vec<usize>>>,
    outgoing: Vec<Vec<usize>>,
}

impl Interfaces {
    fn build(blocks: &BlockMap, mapping: &dyn BlockMapping) -> Self {
        let p = blocks.count();
        let mut incoming = vec![BTreeMap::new(); p];
        let mut outgoing = vec![Vec::new(); p];
        for (i, inc) in incoming.iter_mut().enumerate() {
            for g in mapping.reads(blocks, i) {
                let j = blocks.owner(g);
                if j != i {
                    inc.entry(j).or_insert_with(Vec::new).push(g);
                }
            }
            for (&j, idx) in inc.iter_mut() {
                idx.sort_unstable();
                idx.dedup();
                outgoing[j].push(i);
            }
        }
        Self { incoming, outgoing }
    }

    /// Blocks that block `i` depends on, ascending.
    pub fn in_neighbors(&self, i: usize) -> Vec<usize> {
        self.incoming[i].keys().copied().collect()
    }

    /// Blocks that depend on block `j`, ascending.
    pub fn out_neighbors(&self, j: usize) -> &[usize] {
        &self.outgoing[j]
    }

    /// Global indices of block `from` read by block `to` (empty if none).
    pub fn indices(&self, from: usize, to: usize) -> &[usize] {
        self.incoming[to].get(&from).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn link_count(&self) -> usize {
        self.outgoing.iter().map(Vec::len).sum()
    }
}

/// `x - f(x) = 0` with a block decomposition.
#[derive(Debug, Clone)]
pub struct FixedPointProblem {
    blocks: BlockMap,
    mapping: Arc<dyn BlockMapping>,
    exact_solution: Option<Vec<f64>>,
    contraction: Option<f64>,
    interfaces: Interfaces,
}

impl FixedPointProblem {
    pub fn new(blocks: BlockMap, mapping: Arc<dyn BlockMapping>) -> Result<Self> {
        if blocks.dim() != mapping.dim() {
            return Err(contract(format!(
                "block map covers {} components, mapping has {}",
                blocks.dim(),
                mapping.dim()
            )));
        }
        let interfaces = Interfaces::build(&blocks, mapping.as_ref());
        Ok(Self { blocks, mapping, exact_solution: None, contraction: None, interfaces })
    }

    /// Attaches a known solution; rejected unless it is a fixed point to
    /// 1e-12 relative.
    pub fn with_exact_solution(mut self, x: Vec<f64>) -> Result<Self> {
        if x.len() != self.dim() {
            return Err(contract("exact solution has wrong dimension"));
        }
        let fx = self.apply(&x);
        for (g, (a, b)) in x.iter().zip(&fx).enumerate() {
            if (a - b).abs() > 1e-12 * (1.0 + a.abs()) {
                return Err(Error::Construction(format!(
                    "supplied solution is not a fixed point at component {g}: {a} vs {b}"
                )));
            }
        }
        self.exact_solution = Some(x);
        Ok(self)
    }

    pub fn with_contraction(mut self, alpha: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&alpha) {
            return Err(Error::Construction(format!("contraction factor {alpha} not in [0, 1)")));
        }
        self.contraction = Some(alpha);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.blocks.dim()
    }

    pub fn block_count(&self) -> usize {
        self.blocks.count()
    }

    pub fn blocks(&self) -> &BlockMap {
        &self.blocks
    }

    pub fn mapping(&self) -> &Arc<dyn BlockMapping> {
        &self.mapping
    }

    pub fn exact_solution(&self) -> Option<&[f64]> {
        self.exact_solution.as_deref()
    }

    pub fn contraction_factor(&self) -> Option<f64> {
        self.contraction
    }

    pub fn interfaces(&self) -> &Interfaces {
        &self.interfaces
    }

    pub fn apply_block(&self, i: usize, view: &[f64], out: &mut [f64]) {
        self.mapping.apply_block(&self.blocks, i, view, out);
    }

    pub fn defect_block(&self, i: usize, view: &[f64], out: &mut [f64]) {
        self.mapping.defect_block(&self.blocks, i, view, out);
    }

    /// Full `f(x)`, block by block.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        for i in 0..self.block_count() {
            let r = self.blocks.range(i);
            self.apply_block(i, x, &mut out[r]);
        }
        out
    }

    /// Local residual `r_i` on a raw vector, without dimension checks.
    pub(crate) fn local_residual_raw(&self, norm: Norm, i: usize, view: &[f64]) -> f64 {
        let mut d = vec![0.0; self.blocks.len_of(i)];
        self.defect_block(i, view, &mut d);
        norm.local(&d)
    }

    /// Global residual on a raw vector.
    pub(crate) fn global_residual_raw(&self, norm: Norm, x: &[f64]) -> f64 {
        let folded = (0..self.block_count())
            .map(|i| self.local_residual_raw(norm, i, x))
            .fold(0.0, |a, b| norm.combine(a, b));
        norm.finish(folded)
    }
}

/// `r_i(view)`: for `l(q)` the q-th power sum of block `i`'s defect, for the
/// max norm its largest absolute entry.
pub fn evaluate_local_residual(
    problem: &FixedPointProblem,
    spec: &ResidualSpec,
    block: usize,
    view: &GlobalView,
) -> Result<f64> {
    view.check(problem)?;
    if block >= problem.block_count() {
        return Err(contract(format!(
            "block {block} out of range (p = {})",
            problem.block_count()
        )));
    }
    Ok(problem.local_residual_raw(spec.norm, block, &view.values))
}

/// `σ(locals)`.
pub fn reduce_residual(spec: &ResidualSpec, locals: &[f64]) -> Result<f64> {
    let mut folded = 0.0;
    for (i, &v) in locals.iter().enumerate() {
        if !(v >= 0.0) {
            return Err(contract(format!("local residual {i} is {v}, must be >= 0")));
        }
        folded = spec.norm.combine(folded, v);
    }
    Ok(spec.norm.finish(folded))
}

/// Ground-truth `r(view)` evaluated on the whole vector.
pub fn true_global_residual(
    problem: &FixedPointProblem,
    spec: &ResidualSpec,
    view: &GlobalView,
) -> Result<f64> {
    view.check(problem)?;
    let locals: Vec<f64> = (0..problem.block_count())
        .map(|i| problem.local_residual_raw(spec.norm, i, &view.values))
        .collect();
    reduce_residual(spec, &locals)
}
