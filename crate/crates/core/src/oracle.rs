//! God-view measurements over simulated executions.
//!
//! Nothing in `detection` depends on this module: protocols only ever see
//! their own process's data, while the oracle reads recorded cuts and full
//! engine state.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detection::{BoundConstant, Protocol, SnapshotRecord, SnapshotStatus};
use crate::engine::{run, Scenario};
use crate::error::{contract, Error, Result};
use crate::fixedpoint::{FixedPointProblem, ResidualSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    LiveState,
    Snapshot,
    PfaitRound,
}

/// A global vector assembled one block per process, with the iteration
/// stamp of each block.
#[derive(Debug, Clone, PartialEq)]
pub struct CutView {
    pub values: Vec<f64>,
    pub stamps: Vec<u64>,
    pub provenance: Provenance,
}

impl CutView {
    /// The diagonal cut `[x̄_1^(1) … x̄_p^(p)]` of a set of records.
    pub fn from_records(records: &[SnapshotRecord], problem: &FixedPointProblem) -> Result<Self> {
        let blocks = records
            .iter()
            .map(|r| {
                r.own
                    .as_ref()
                    .map(|o| (o.values.clone(), o.stamp))
                    .ok_or_else(|| contract(format!("record of process {} has no own block", r.owner)))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut cut = Self::from_blocks(blocks, problem)?;
        cut.provenance = Provenance::Snapshot;
        Ok(cut)
    }

    /// Blocks in process order, each with its stamp.
    pub fn from_blocks(blocks: Vec<(Vec<f64>, u64)>, problem: &FixedPointProblem) -> Result<Self> {
        if blocks.len() != problem.block_count() {
            return Err(contract(format!("cut has {} blocks, problem has {}", blocks.len(), problem.block_count())));
        }
        let mut values = vec![0.0; problem.dim()];
        let mut stamps = Vec::with_capacity(blocks.len());
        for (i, (block, stamp)) in blocks.into_iter().enumerate() {
            let range = problem.blocks().range(i);
            if block.len() != range.len() {
                return Err(contract(format!("block {i} has length {}, expected {}", block.len(), range.len())));
            }
            values[range].copy_from_slice(&block);
            stamps.push(stamp);
        }
        Ok(Self { values, stamps, provenance: Provenance::PfaitRound })
    }

    pub fn live(values: Vec<f64>, stamps: Vec<u64>) -> Self {
        Self { values, stamps, provenance: Provenance::LiveState }
    }
}

/// Exact `r` on the assembled cut.
pub fn oracle_residual_at_cut(cut: &CutView, problem: &FixedPointProblem, spec: &ResidualSpec) -> Result<f64> {
    if cut.values.len() != problem.dim() || cut.stamps.len() != problem.block_count() {
        return Err(contract("cut does not match the problem dimensions"));
    }
    Ok(problem.global_residual_raw(spec.norm, &cut.values))
}

#[derive(Debug, Clone, PartialEq)]
pub enum Consistency {
    Consistent,
    /// Process `reader` recorded a value of block `block` different from
    /// what `block`'s owner recorded.
    Inconsistent { block: usize, reader: usize, index: usize, recorded: f64, owner_value: f64 },
}

impl Consistency {
    pub fn is_consistent(&self) -> bool {
        *self == Consistency::Consistent
    }
}

impl fmt::Display for Consistency {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Consistency::Consistent => f.write_str("consistent"),
            Consistency::Inconsistent { block, reader, index, recorded, owner_value } => write!(
                f,
                "inconsistent: block {block} as seen by {reader} differs at index {index} ({recorded} vs {owner_value})"
            ),
        }
    }
}

/// Compares every reconstruction entry two processes share. Since a
/// process only reconstructs its own block and the entries it reads, this
/// is element-wise equality of the reconstructions wherever both define a
/// value.
pub fn check_snapshot_consistency(records: &[SnapshotRecord], problem: &FixedPointProblem) -> Consistency {
    let owners: Vec<Option<&[f64]>> = {
        let mut v = vec![None; problem.block_count()];
        for r in records {
            if let Some(own) = &r.own {
                v[r.owner] = Some(own.values.as_slice());
            }
        }
        v
    };
    for r in records {
        for (&j, dep) in &r.deps {
            let Some(owner_block) = owners[j] else { continue };
            let start = problem.blocks().range(j).start;
            for (&g, &v) in problem.interfaces().indices(j, r.owner).iter().zip(&dep.values) {
                let w = owner_block[g - start];
                if v.to_bits() != w.to_bits() {
                    return Consistency::Inconsistent { block: j, reader: r.owner, index: g, recorded: v, owner_value: w };
                }
            }
        }
    }
    Consistency::Consistent
}

/// Largest `|stamp(x̄_j^(i)) - stamp(x̄_j^(j))|` over all recorded
/// dependencies.
pub fn max_stamp_gap(records: &[SnapshotRecord]) -> u64 {
    let own: Vec<Option<u64>> = {
        let n = records.iter().map(|r| r.owner + 1).max().unwrap_or(0);
        let mut v = vec![None; n];
        for r in records {
            v[r.owner] = r.own.as_ref().map(|o| o.stamp);
        }
        v
    };
    records
        .iter()
        .flat_map(|r| r.deps.iter().filter_map(|(&j, d)| own.get(j).copied().flatten().map(|s| s.abs_diff(d.stamp))))
        .max()
        .unwrap_or(0)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum EstimateMode {
    /// Worst case over all samples.
    #[default]
    Max,
    /// Empirical quantile, `q` in `[0, 1]`.
    Quantile(f64),
}

impl fmt::Display for EstimateMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EstimateMode::Max => f.write_str("max"),
            EstimateMode::Quantile(q) => write!(f, "q{q}"),
        }
    }
}

impl FromStr for EstimateMode {
    type Err = Error;

    /// `max` or `q<fraction>`, e.g. `q0.95`.
    fn from_str(s: &str) -> Result<Self> {
        if s == "max" {
            return Ok(EstimateMode::Max);
        }
        s.strip_prefix('q')
            .and_then(|q| q.parse::<f64>().ok())
            .filter(|q| (0.0..=1.0).contains(q))
            .map(EstimateMode::Quantile)
            .ok_or_else(|| Error::Parse(format!("estimate mode `{s}` is neither `max` nor `q<0..1>`")))
    }
}

impl Serialize for EstimateMode {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for EstimateMode {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundEstimate {
    pub p: usize,
    pub m: usize,
    /// `|r(x̄) - r̃| / ε` per confirmed snapshot.
    pub samples: Vec<f64>,
    pub c_est: f64,
    pub run_count: usize,
    pub mode: EstimateMode,
}

impl BoundEstimate {
    fn new(p: usize, m: usize, mode: EstimateMode) -> Self {
        Self { p, m, samples: Vec::new(), c_est: 0.0, run_count: 0, mode }
    }

    pub fn push(&mut self, sample: f64) {
        self.samples.push(sample);
        self.c_est = match self.mode {
            EstimateMode::Max => self.c_est.max(sample),
            EstimateMode::Quantile(q) => {
                let mut s = self.samples.clone();
                s.sort_by(f64::total_cmp);
                let idx = ((q.clamp(0.0, 1.0) * (s.len() - 1) as f64).ceil()) as usize;
                s[idx]
            }
        };
    }
}

/// NFAIS scenario with the bound constant resolved to `c`.
fn with_bound(scenario: &Scenario, c: f64) -> Result<Scenario> {
    if scenario.detection.protocol != Protocol::Nfais {
        return Err(Error::Config(format!("bound estimation needs NFAIS, got {}", scenario.detection.protocol)));
    }
    let mut s = scenario.clone();
    s.detection.bound = BoundConstant::Fixed(c);
    s.engine.record_log = false;
    Ok(s)
}

/// Runs the scenario once per seed and measures `|r(x̄) - r̃| / ε` on every
/// confirmed snapshot. Fails if no run produced a confirmed snapshot.
pub fn estimate_c(scenario: &Scenario, seeds: &[u64], mode: EstimateMode) -> Result<BoundEstimate> {
    if seeds.is_empty() {
        return Err(Error::Config("estimate_c needs at least one run".into()));
    }
    let s = with_bound(scenario, 0.0)?;
    let eps = s.detection.effective_epsilon();
    if !(eps > 0.0) {
        return Err(Error::Config("estimate_c needs epsilon > 0".into()));
    }
    let reports = seeds.par_iter().map(|&seed| run(&s, seed).map(|o| o.report)).collect::<Result<Vec<_>>>()?;
    let mut est = BoundEstimate::new(s.problem.block_count(), s.detection.persistence, mode);
    est.run_count = reports.len();
    for report in &reports {
        for obs in &report.observations {
            if obs.status == Some(SnapshotStatus::Confirmed) {
                if let Some(r) = obs.cut_residual {
                    est.push((r - obs.reported).abs() / eps);
                }
            }
        }
    }
    if est.samples.is_empty() {
        return Err(Error::EstimationFailed(format!("no confirmed snapshot in {} runs", est.run_count)));
    }
    Ok(est)
}

/// A confirmed snapshot that passed the scaled test but whose cut missed
/// the target precision.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub seed: u64,
    pub tick: u64,
    pub reported: f64,
    pub oracle: f64,
    pub c: f64,
    pub cut: Vec<f64>,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "seed={} tick={} r_tilde={:.17e} oracle_r={:.17e} c={:.17e} cut=",
            self.seed, self.tick, self.reported, self.oracle, self.c
        )?;
        for (k, v) in self.cut.iter().enumerate() {
            if k > 0 {
                f.write_str(",")?;
            }
            write!(f, "{v:e}")?;
        }
        Ok(())
    }
}

pub fn export_violations(violations: &[Violation]) -> String {
    violations.iter().map(|v| format!("{v}\n")).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationSummary {
    pub runs: usize,
    /// Confirmed snapshots that passed `r̃ < ε̃ / (1 + c)`.
    pub checked: usize,
    /// Confirmed snapshots overall.
    pub confirmed: usize,
    /// Confirmed snapshots with `r(x̄) >= r̃ + c ε`.
    pub bound_misses: usize,
    pub violations: Vec<Violation>,
}

/// Re-runs the scenario with `c` on fresh seeds and checks every confirmed
/// snapshot that passes the scaled test against the target precision.
pub fn validate_bound(scenario: &Scenario, seeds: &[u64], c: f64) -> Result<ValidationSummary> {
    let s = with_bound(scenario, c)?;
    let eps = s.detection.effective_epsilon();
    let target = s.detection.target;
    let reports = seeds.par_iter().map(|&seed| run(&s, seed).map(|o| o.report)).collect::<Result<Vec<_>>>()?;
    let mut summary =
        ValidationSummary { runs: reports.len(), checked: 0, confirmed: 0, bound_misses: 0, violations: Vec::new() };
    for report in &reports {
        for obs in &report.observations {
            if obs.status != Some(SnapshotStatus::Confirmed) {
                continue;
            }
            let Some(r) = obs.cut_residual else { continue };
            summary.confirmed += 1;
            if r >= obs.reported + c * eps {
                summary.bound_misses += 1;
            }
            if obs.reported < target / (1.0 + c) {
                summary.checked += 1;
                if r >= target {
                    let cut = CutView::from_records(&obs.records, &s.problem)?;
                    summary.violations.push(Violation {
                        seed: report.seed,
                        tick: obs.tick,
                        reported: obs.reported,
                        oracle: r,
                        c,
                        cut: cut.values,
                    });
                }
            }
        }
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detection::DepRecord;
    use crate::problems::linear::LinearFixedPoint;

    fn jacobi2() -> FixedPointProblem {
        LinearFixedPoint::jacobi(&[vec![2.0, 1.0], vec![1.0, 2.0]], &[3.0, 3.0]).unwrap().problem(2).unwrap()
    }

    fn rec(owner: usize, own: f64, dep: f64, stamps: (u64, u64)) -> SnapshotRecord {
        let mut r = SnapshotRecord::new(owner, 0, vec![1 - owner]);
        r.own = Some(DepRecord { values: vec![own], stamp: stamps.0 });
        r.deps.insert(1 - owner, DepRecord { values: vec![dep], stamp: stamps.1 });
        r
    }

    #[test]
    fn exact_solution_cut_is_zero() {
        let prob = jacobi2();
        let cut = CutView::from_blocks(vec![(vec![1.0], 3), (vec![1.0], 4)], &prob).unwrap();
        assert_eq!(oracle_residual_at_cut(&cut, &prob, &ResidualSpec::l2()).unwrap(), 0.0);
    }

    #[test]
    fn consistency_and_stamp_gaps() {
        let prob = jacobi2();
        let same = [rec(0, 0.5, 0.25, (2, 1)), rec(1, 0.25, 0.5, (1, 2))];
        assert!(check_snapshot_consistency(&same, &prob).is_consistent());
        assert_eq!(max_stamp_gap(&same), 0);
        let off = [rec(0, 0.5, 0.3, (2, 3)), rec(1, 0.25, 0.5, (1, 2))];
        let c = check_snapshot_consistency(&off, &prob);
        assert!(matches!(c, Consistency::Inconsistent { block: 1, reader: 0, .. }), "{c}");
        assert_eq!(max_stamp_gap(&off), 2);
    }

    #[test]
    fn single_process_is_consistent() {
        let prob = LinearFixedPoint::jacobi(&[vec![2.0, 1.0], vec![1.0, 2.0]], &[3.0, 3.0]).unwrap().problem(1).unwrap();
        let mut r = SnapshotRecord::new(0, 0, vec![]);
        r.own = Some(DepRecord { values: vec![0.0, 0.0], stamp: 0 });
        assert!(check_snapshot_consistency(&[r], &prob).is_consistent());
    }

    #[test]
    fn estimate_mode_strings() {
        assert_eq!("max".parse::<EstimateMode>().unwrap(), EstimateMode::Max);
        assert_eq!("q0.95".parse::<EstimateMode>().unwrap(), EstimateMode::Quantile(0.95));
        assert_eq!(EstimateMode::Quantile(0.5).to_string(), "q0.5");
        assert!("q2".parse::<EstimateMode>().is_err());
    }

    #[test]
    fn quantile_mode() {
        let mut e = BoundEstimate::new(2, 2, EstimateMode::Quantile(0.5));
        for s in [4.0, 1.0, 3.0, 2.0, 5.0] {
            e.push(s);
        }
        assert_eq!(e.c_est, 3.0);
        let mut e = BoundEstimate::new(2, 2, EstimateMode::Max);
        e.push(0.2);
        e.push(0.1);
        assert_eq!(e.c_est, 0.2);
    }
}
