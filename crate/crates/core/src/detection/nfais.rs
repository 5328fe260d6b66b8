use std::collections::BTreeMap;

use super::snapshot::Epoch;
use super::{Action, Detector, LocalContext, MarkerInfo, Protocol, RoundOutcome, SnapshotRecord, SnapshotStatus};
use crate::error::{Error, Result};

/// Approximate snapshot for links that may reorder up to `m` messages.
///
/// Recording starts after `m` consecutive locally converged iterations and
/// sends an empty marker. After `m` more iterations a confirm message tells
/// the neighbors whether local convergence persisted. The confirm flags are
/// folded into the reduction, so the root sees one global valid bit.
#[derive(Debug, Clone)]
pub struct Nfais {
    state: Epoch,
    epsilon: f64,
    m: u64,
    persist: u64,
    recorded_at: Option<u64>,
    own_flag: bool,
    confirm_sent: bool,
    confirms: BTreeMap<usize, bool>,
}

impl Nfais {
    pub fn new(id: usize, deps: Vec<usize>, epsilon: f64, m: u64) -> Self {
        Self {
            state: Epoch::new(id, deps),
            epsilon,
            m: m.max(1),
            persist: 0,
            recorded_at: None,
            own_flag: true,
            confirm_sent: false,
            confirms: BTreeMap::new(),
        }
    }

    fn rearm(&mut self) {
        self.persist = 0;
        self.recorded_at = None;
        self.own_flag = true;
        self.confirm_sent = false;
        self.confirms.clear();
    }

    fn advance(&mut self, epoch: u64, what: &str) -> Result<()> {
        if self.state.advance_to(epoch, what)? {
            self.rearm();
        }
        Ok(())
    }

    fn start_recording(&mut self, ctx: &LocalContext<'_>, actions: &mut Vec<Action>) {
        self.state.record_own(ctx, actions, false);
        self.recorded_at = Some(ctx.iteration);
        self.own_flag = true;
    }

    /// Runs once `r_i < ε` has held for `m` successive iterations.
    pub fn nfais_on_persistent_convergence(&mut self, ctx: &LocalContext<'_>) -> Result<Vec<Action>> {
        let mut actions = Vec::new();
        if self.state.record.own.is_none() {
            self.start_recording(ctx, &mut actions);
            self.try_finish(ctx, &mut actions)?;
        }
        Ok(actions)
    }

    fn try_finish(&mut self, ctx: &LocalContext<'_>, actions: &mut Vec<Action>) -> Result<()> {
        if self.state.contributed
            || !self.confirm_sent
            || !self.state.record.is_complete()
            || !self.state.deps.iter().all(|j| self.confirms.contains_key(j))
        {
            return Ok(());
        }
        let valid = self.own_flag && self.confirms.values().all(|&f| f);
        let status = if valid { SnapshotStatus::Confirmed } else { SnapshotStatus::Discarded };
        self.state.record.status = status;
        let value = self.state.record.local_residual(ctx.problem, ctx.norm)?;
        self.state.contributed = true;
        let epoch = self.state.epoch();
        actions.push(Action::Status { epoch, status });
        actions.push(Action::Contribute { epoch, value, valid });
        Ok(())
    }
}

impl Detector for Nfais {
    fn protocol(&self) -> Protocol {
        Protocol::Nfais
    }

    fn on_iterate(&mut self, ctx: &LocalContext<'_>) -> Result<Vec<Action>> {
        let converged = ctx.local_residual < self.epsilon;
        self.persist = if converged { self.persist + 1 } else { 0 };
        let mut actions = Vec::new();
        match self.recorded_at {
            None if self.persist >= self.m && !self.state.contributed => {
                self.start_recording(ctx, &mut actions);
            }
            Some(at) if !self.confirm_sent => {
                self.own_flag &= converged;
                if ctx.iteration - at >= self.m {
                    self.confirm_sent = true;
                    actions.push(Action::SendConfirm { epoch: self.state.epoch(), flag: self.own_flag });
                }
            }
            _ => {}
        }
        self.try_finish(ctx, &mut actions)?;
        Ok(actions)
    }

    fn on_trigger(&mut self, ctx: &LocalContext<'_>) -> Result<Vec<Action>> {
        self.nfais_on_persistent_convergence(ctx)
    }

    fn on_marker(&mut self, ctx: &LocalContext<'_>, marker: MarkerInfo<'_>) -> Result<Vec<Action>> {
        if marker.payload.is_some() {
            return Err(Error::Protocol { process: ctx.id, detail: "NFAIS marker carries a payload".into() });
        }
        self.advance(marker.epoch, "marker")?;
        self.state.check_duplicate(marker.from)?;
        self.state.record.deps.insert(marker.from, ctx.dep_record(marker.from));
        let mut actions = Vec::new();
        self.try_finish(ctx, &mut actions)?;
        Ok(actions)
    }

    fn on_confirm(&mut self, ctx: &LocalContext<'_>, from: usize, epoch: u64, flag: bool) -> Result<Vec<Action>> {
        self.advance(epoch, "confirm")?;
        if self.confirms.insert(from, flag).is_some() {
            return Err(Error::Protocol {
                process: ctx.id,
                detail: format!("duplicate confirm from {from} in epoch {epoch}"),
            });
        }
        let mut actions = Vec::new();
        self.try_finish(ctx, &mut actions)?;
        Ok(actions)
    }

    fn on_round_result(&mut self, _ctx: &LocalContext<'_>, outcome: &RoundOutcome) -> Result<Vec<Action>> {
        if outcome.epoch == self.state.epoch() && !outcome.terminate {
            self.state.finish_round(outcome);
            self.rearm();
        }
        Ok(Vec::new())
    }

    fn record(&self) -> Option<&SnapshotRecord> {
        Some(&self.state.record)
    }
}
