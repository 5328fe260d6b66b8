//! Scripted executions: the caller chooses every update and delivery.
//!
//! Data messages wait in per-link FIFO queues until a `deliver` step pops
//! them. Reduction traffic is flushed after every step, so rounds complete
//! as soon as their last contribution exists.

use std::fmt;
use std::str::FromStr;

use super::log::EventRecord;
use super::network::Channel;
use super::{Observation, Scenario, Simulation, TraceEntry, Verdict};
use crate::detection::SnapshotRecord;
use crate::error::{Error, Result};
use crate::fixedpoint::FixedPointProblem;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScriptStep {
    Update(usize),
    /// Deliver the oldest pending data message on link `from -> to`.
    Deliver { from: usize, to: usize },
    /// Force the protocol's local convergence handler.
    Trigger(usize),
}

impl fmt::Display for ScriptStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScriptStep::Update(i) => write!(f, "update {i}"),
            ScriptStep::Deliver { from, to } => write!(f, "deliver {from} {to}"),
            ScriptStep::Trigger(i) => write!(f, "trigger {i}"),
        }
    }
}

impl FromStr for ScriptStep {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Parse(format!("bad script step `{s}`"));
        let words: Vec<&str> = s.split_whitespace().collect();
        let num = |w: &str| w.parse::<usize>().map_err(|_| bad());
        match words.as_slice() {
            ["update", i] => Ok(ScriptStep::Update(num(i)?)),
            ["trigger", i] => Ok(ScriptStep::Trigger(num(i)?)),
            ["deliver", from, to] => Ok(ScriptStep::Deliver { from: num(from)?, to: num(to)? }),
            _ => Err(bad()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ReplayReport {
    pub iterations: Vec<u64>,
    /// Each process's local copy of the global vector.
    pub views: Vec<Vec<f64>>,
    /// Current record per process, if the protocol keeps one.
    pub records: Vec<Option<SnapshotRecord>>,
    /// Completed rounds, including the records that fed them.
    pub observations: Vec<Observation>,
    pub terminated: bool,
    pub log: Vec<EventRecord>,
    pub trace: Vec<TraceEntry>,
}

pub struct Replay<'a> {
    sim: Simulation<'a>,
}

impl<'a> Replay<'a> {
    pub fn new(scenario: &'a Scenario) -> Result<Self> {
        scenario.validate()?;
        Ok(Self { sim: Simulation::new(scenario, 0, true) })
    }

    fn check(&self, i: usize) -> Result<()> {
        if i >= self.sim.p() {
            return Err(Error::Contract(format!("process {i} out of range (p = {})", self.sim.p())));
        }
        if self.sim.procs[i].stopped {
            return Err(Error::Contract(format!("process {i} already stopped")));
        }
        Ok(())
    }

    pub fn apply(&mut self, step: ScriptStep) -> Result<()> {
        self.sim.tick += 1;
        self.sim.events += 1;
        match step {
            ScriptStep::Update(i) => {
                self.check(i)?;
                self.sim.update(i)?;
            }
            ScriptStep::Trigger(i) => {
                self.check(i)?;
                self.sim.trigger(i)?;
            }
            ScriptStep::Deliver { from, to } => {
                let env = self
                    .sim
                    .pending
                    .get_mut(&(from, to, Channel::Data))
                    .and_then(|q| q.pop_front())
                    .ok_or_else(|| Error::Contract(format!("no pending message on link {from}->{to}")))?;
                self.sim.deliver(env)?;
            }
        }
        self.flush_reductions()
    }

    pub fn run_script(&mut self, steps: &[ScriptStep]) -> Result<()> {
        for (n, &step) in steps.iter().enumerate() {
            self.apply(step).map_err(|e| match e {
                Error::Contract(msg) => Error::Contract(format!("step {n} `{step}`: {msg}")),
                other => other,
            })?;
        }
        Ok(())
    }

    fn flush_reductions(&mut self) -> Result<()> {
        loop {
            let next = self
                .sim
                .pending
                .iter_mut()
                .filter(|(k, _)| k.2 == Channel::Reduction)
                .find_map(|(_, q)| q.pop_front());
            match next {
                Some(env) => self.sim.deliver(env)?,
                None => return Ok(()),
            }
        }
    }

    /// Messages still waiting on data links.
    pub fn pending_count(&self) -> usize {
        self.sim.pending.iter().filter(|(k, _)| k.2 == Channel::Data).map(|(_, q)| q.len()).sum()
    }

    pub fn finish(self) -> ReplayReport {
        let records = self.sim.detectors.iter().map(|d| d.record().cloned()).collect();
        let views = self.sim.procs.iter().map(|s| s.view.clone()).collect();
        let terminated = self.sim.stopped == self.sim.p();
        let out = self.sim.finish(if terminated { Verdict::Terminated } else { Verdict::Timeout });
        ReplayReport {
            iterations: out.report.iterations,
            views,
            records,
            observations: out.report.observations,
            terminated,
            log: out.log,
            trace: out.trace,
        }
    }
}

impl ReplayReport {
    /// Records of one snapshot epoch: those that fed its round when the
    /// round completed, otherwise the processes' current records.
    pub fn epoch_records(&self, epoch: u64) -> Vec<Option<SnapshotRecord>> {
        if let Some(obs) = self.observations.iter().find(|o| o.epoch == epoch && !o.records.is_empty()) {
            return obs.records.iter().cloned().map(Some).collect();
        }
        self.records.iter().map(|r| r.clone().filter(|r| r.epoch == epoch)).collect()
    }

    /// Global vector `x̄^(i)` each process assembled in `epoch`; `None`
    /// where the record is missing or incomplete. Entries a process never
    /// reads are zero.
    pub fn cuts(&self, problem: &FixedPointProblem, epoch: u64) -> Result<Vec<Option<Vec<f64>>>> {
        let base = vec![0.0; problem.dim()];
        self.epoch_records(epoch)
            .iter()
            .map(|r| match r {
                Some(r) if r.is_complete() => r.reconstruction(problem, &base).map(Some),
                _ => Ok(None),
            })
            .collect()
    }
}
