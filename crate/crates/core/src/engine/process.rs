use crate::error::{Error, Result};
use crate::fixedpoint::FixedPointProblem;

use super::network::{Envelope, EnvelopeKind, Payload};

/// One simulated process: its block, iteration count and the dependency
/// data it has received so far.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcessState {
    pub id: usize,
    /// `k^(i)`.
    pub iteration: u64,
    /// Local copy of the global vector. The own block is authoritative;
    /// other entries hold the last delivered interface values.
    pub view: Vec<f64>,
    /// Per block, the sender iteration of the data held in `view`. The own
    /// entry tracks `iteration`.
    pub dep_stamps: Vec<u64>,
    pub stopped: bool,
}

impl ProcessState {
    pub fn new(id: usize, x0: &[f64], p: usize) -> Self {
        Self { id, iteration: 0, view: x0.to_vec(), dep_stamps: vec![0; p], stopped: false }
    }

    pub fn block<'a>(&'a self, problem: &FixedPointProblem) -> &'a [f64] {
        &self.view[problem.blocks().range(self.id)]
    }

    /// `x_i := f_i(view)`, `k^(i) += 1`.
    pub fn update(&mut self, problem: &FixedPointProblem) -> Result<()> {
        let range = problem.blocks().range(self.id);
        let mut next = vec![0.0; range.len()];
        problem.apply_block(self.id, &self.view, &mut next);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { process: self.id, iteration: self.iteration + 1 });
        }
        self.view[range].copy_from_slice(&next);
        self.iteration += 1;
        self.dep_stamps[self.id] = self.iteration;
        Ok(())
    }

    /// Interface values this process sends to `to`.
    pub fn interface_for(&self, problem: &FixedPointProblem, to: usize) -> Vec<f64> {
        problem.interfaces().indices(self.id, to).iter().map(|&g| self.view[g]).collect()
    }

    /// Applies a computation payload unless it is older than the data
    /// already held. Returns whether the view changed.
    pub fn receive_computation(&mut self, problem: &FixedPointProblem, env: &Envelope) -> bool {
        let Payload::Block(values) = &env.payload else {
            return false;
        };
        if env.sent_at_version <= self.dep_stamps[env.from] {
            return false;
        }
        for (&g, &v) in problem.interfaces().indices(env.from, self.id).iter().zip(values) {
            self.view[g] = v;
        }
        self.dep_stamps[env.from] = env.sent_at_version;
        true
    }
}

/// One asynchronous update of process `state`: applies `f_i` to the view
/// assembled from the own block and the delivered dependencies, then
/// returns computation envelopes (unsequenced) for every out-neighbor.
pub fn step_process(state: &mut ProcessState, problem: &FixedPointProblem) -> Result<Vec<Envelope>> {
    state.update(problem)?;
    Ok(problem
        .interfaces()
        .out_neighbors(state.id)
        .iter()
        .map(|&to| Envelope {
            kind: EnvelopeKind::Computation,
            from: state.id,
            to,
            seq: 0,
            epoch: 0,
            sent_at_version: state.iteration,
            payload: Payload::Block(state.interface_for(problem, to)),
        })
        .collect())
}
