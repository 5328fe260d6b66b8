//! Non-blocking reduction over a binomial tree rooted at process 0.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::fixedpoint::{FixedPointProblem, Norm, ResidualSpec};

/// Result of one reduction round, broadcast back down the tree.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RoundOutcome {
    pub epoch: u64,
    pub value: f64,
    pub valid: bool,
    pub terminate: bool,
}

/// Parent of `i` in a binomial tree: `i` with its lowest set bit cleared.
pub fn tree_parent(i: usize) -> Option<usize> {
    (i != 0).then(|| i & (i - 1))
}

/// Children of `i` in a binomial tree over `0..p`, ascending.
pub fn tree_children(i: usize, p: usize) -> Vec<usize> {
    let limit = if i == 0 { usize::MAX } else { i & i.wrapping_neg() };
    let mut out = Vec::new();
    let mut bit = 1;
    while bit < limit && i + bit < p {
        out.push(i + bit);
        bit <<= 1;
    }
    out
}

#[derive(Debug, Clone, Copy)]
struct Partial {
    count: usize,
    folded: f64,
    valid: bool,
}

/// One process's node in the reduction tree. Partials are keyed by epoch so
/// early contributions for a later round are buffered.
#[derive(Debug, Clone)]
pub struct ReductionNode {
    pub id: usize,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    pending: BTreeMap<u64, Partial>,
}

impl ReductionNode {
    pub fn new(id: usize, p: usize) -> Self {
        Self { id, parent: tree_parent(id), children: tree_children(id, p), pending: BTreeMap::new() }
    }

    /// Folds in one contribution (own or a child's subtree). Returns the
    /// subtree total once every expected contribution arrived.
    pub fn absorb(&mut self, epoch: u64, folded: f64, valid: bool, norm: Norm) -> Option<(f64, bool)> {
        let expected = 1 + self.children.len();
        let part = self.pending.entry(epoch).or_insert(Partial { count: 0, folded: 0.0, valid: true });
        part.count += 1;
        part.folded = norm.combine(part.folded, folded);
        part.valid &= valid;
        if part.count == expected {
            let done = self.pending.remove(&epoch).unwrap();
            Some((done.folded, done.valid))
        } else {
            None
        }
    }
}

/// One contribution to a round, with the contributor's iteration stamp.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Contribution {
    pub process: usize,
    pub value: f64,
    pub stamp: u64,
}

/// Bookkeeping for a reduction round as seen from outside the processes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReductionRound {
    pub round: u64,
    pub contributions: Vec<Contribution>,
    pub combined: Option<f64>,
    pub in_flight: bool,
}

impl ReductionRound {
    pub fn new(round: u64) -> Self {
        Self { round, contributions: Vec::new(), combined: None, in_flight: true }
    }

    /// Combines once exactly one contribution per process is present.
    pub fn try_combine(&mut self, p: usize, norm: Norm) -> Option<f64> {
        let mut seen = vec![false; p];
        for c in &self.contributions {
            if c.process >= p || seen[c.process] {
                return None;
            }
            seen[c.process] = true;
        }
        if !seen.iter().all(|&s| s) {
            return None;
        }
        let folded = self.contributions.iter().fold(0.0, |a, c| norm.combine(a, c.value));
        let value = norm.finish(folded);
        self.combined = Some(value);
        self.in_flight = false;
        Some(value)
    }
}

/// A round in which every process contributes `r_i` on its current view,
/// without any recording. `views[i]` is process `i`'s local copy of the
/// global vector and `stamps[i]` its iteration count.
pub fn pfait_launch_round(
    round: u64,
    problem: &FixedPointProblem,
    spec: &ResidualSpec,
    views: &[&[f64]],
    stamps: &[u64],
) -> ReductionRound {
    let mut r = ReductionRound::new(round);
    for (i, view) in views.iter().enumerate() {
        r.contributions.push(Contribution {
            process: i,
            value: problem.local_residual_raw(spec.norm, i, view),
            stamp: stamps[i],
        });
    }
    r
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RoundDecision {
    Terminate,
    Continue,
}

/// Stop once the combined residual is strictly below `epsilon`.
pub fn pfait_on_round_complete(combined: f64, epsilon: f64) -> RoundDecision {
    if combined < epsilon {
        RoundDecision::Terminate
    } else {
        RoundDecision::Continue
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binomial_tree_covers_every_process_once() {
        for p in 1..40 {
            let mut seen = vec![0; p];
            seen[0] += 1;
            for i in 0..p {
                for c in tree_children(i, p) {
                    assert_eq!(tree_parent(c), Some(i));
                    seen[c] += 1;
                }
            }
            assert!(seen.iter().all(|&s| s == 1), "p={p}: {seen:?}");
        }
        assert_eq!(tree_children(0, 8), vec![1, 2, 4]);
        assert_eq!(tree_children(4, 8), vec![5, 6]);
        assert_eq!(tree_children(6, 8), vec![7]);
    }

    #[test]
    fn node_buffers_future_epochs() {
        let mut n = ReductionNode::new(0, 3); // children 1, 2
        assert_eq!(n.absorb(1, 4.0, true, Norm::L2), None);
        assert_eq!(n.absorb(0, 1.0, true, Norm::L2), None);
        assert_eq!(n.absorb(0, 2.0, false, Norm::L2), None);
        assert_eq!(n.absorb(0, 3.0, true, Norm::L2), Some((6.0, false)));
    }

    #[test]
    fn round_decisions() {
        assert_eq!(pfait_on_round_complete(1.2e-7, 1e-7), RoundDecision::Continue);
        assert_eq!(pfait_on_round_complete(0.8e-7, 1e-7), RoundDecision::Terminate);
        assert_eq!(pfait_on_round_complete(1e-7, 1e-7), RoundDecision::Continue);
    }

    #[test]
    fn round_needs_one_contribution_per_process() {
        let mut r = ReductionRound::new(0);
        r.contributions.push(Contribution { process: 0, value: 0.3, stamp: 1 });
        assert_eq!(r.try_combine(2, Norm::Max), None);
        r.contributions.push(Contribution { process: 0, value: 0.1, stamp: 2 });
        assert_eq!(r.try_combine(2, Norm::Max), None);
        r.contributions.pop();
        r.contributions.push(Contribution { process: 1, value: 0.5, stamp: 1 });
        assert_eq!(r.try_combine(2, Norm::Max), Some(0.5));
        assert!(!r.in_flight);
    }
}
