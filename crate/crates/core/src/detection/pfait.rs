use super::{Action, Detector, LocalContext, MarkerInfo, Protocol, RoundOutcome, SnapshotRecord};
use crate::error::{Error, Result};

/// Protocol-free termination: each process feeds `r_i` of its current view
/// into successive reductions. At most one round is in flight per process.
#[derive(Debug, Clone)]
pub struct Pfait {
    epsilon: f64,
    period: u64,
    skip_unconverged: bool,
    round: u64,
    awaiting: bool,
    since_result: u64,
}

impl Pfait {
    pub fn new(epsilon: f64, period: u64, skip_unconverged: bool) -> Self {
        let period = period.max(1);
        Self { epsilon, period, skip_unconverged, round: 0, awaiting: false, since_result: period }
    }

    pub fn round(&self) -> u64 {
        self.round
    }
}

impl Detector for Pfait {
    fn protocol(&self) -> Protocol {
        Protocol::Pfait
    }

    fn on_iterate(&mut self, ctx: &LocalContext<'_>) -> Result<Vec<Action>> {
        self.since_result = self.since_result.saturating_add(1);
        if self.awaiting || self.since_result < self.period {
            return Ok(Vec::new());
        }
        if self.skip_unconverged && ctx.local_residual >= self.epsilon {
            return Ok(Vec::new());
        }
        self.awaiting = true;
        Ok(vec![Action::Contribute { epoch: self.round, value: ctx.local_residual, valid: true }])
    }

    fn on_trigger(&mut self, _ctx: &LocalContext<'_>) -> Result<Vec<Action>> {
        Ok(Vec::new())
    }

    fn on_marker(&mut self, ctx: &LocalContext<'_>, marker: MarkerInfo<'_>) -> Result<Vec<Action>> {
        Err(Error::Protocol { process: ctx.id, detail: format!("snapshot message from {} under PFAIT", marker.from) })
    }

    fn on_confirm(&mut self, ctx: &LocalContext<'_>, from: usize, _epoch: u64, _flag: bool) -> Result<Vec<Action>> {
        Err(Error::Protocol { process: ctx.id, detail: format!("confirm from {from} under PFAIT") })
    }

    fn on_round_result(&mut self, _ctx: &LocalContext<'_>, outcome: &RoundOutcome) -> Result<Vec<Action>> {
        if outcome.epoch == self.round {
            self.round += 1;
            self.awaiting = false;
            self.since_result = 0;
        }
        Ok(Vec::new())
    }

    fn record(&self) -> Option<&SnapshotRecord> {
        None
    }
}
