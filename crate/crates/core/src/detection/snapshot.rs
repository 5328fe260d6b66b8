use super::{Action, Detector, LocalContext, MarkerInfo, Protocol, RoundOutcome, SnapshotRecord, SnapshotStatus};
use crate::error::{Error, Result};

/// Epoch-scoped record shared by the snapshot protocols.
#[derive(Debug, Clone)]
pub(super) struct Epoch {
    pub id: usize,
    pub deps: Vec<usize>,
    pub record: SnapshotRecord,
    pub contributed: bool,
}

impl Epoch {
    pub fn new(id: usize, deps: Vec<usize>) -> Self {
        let record = SnapshotRecord::new(id, 0, deps.clone());
        Self { id, deps, record, contributed: false }
    }

    pub fn epoch(&self) -> u64 {
        self.record.epoch
    }

    pub fn reset(&mut self, epoch: u64) {
        self.record = SnapshotRecord::new(self.id, epoch, self.deps.clone());
        self.contributed = false;
    }

    /// Moves to a later epoch announced by an incoming message. Only legal
    /// once this process has contributed to the current one.
    pub fn advance_to(&mut self, epoch: u64, what: &str) -> Result<bool> {
        let cur = self.epoch();
        if epoch < cur {
            return Err(Error::Protocol {
                process: self.id,
                detail: format!("{what} for past epoch {epoch} (current {cur})"),
            });
        }
        if epoch > cur {
            if !self.contributed || epoch != cur + 1 {
                return Err(Error::Protocol {
                    process: self.id,
                    detail: format!("{what} for epoch {epoch} while epoch {cur} is unfinished"),
                });
            }
            self.reset(epoch);
            return Ok(true);
        }
        Ok(false)
    }

    pub fn check_duplicate(&self, from: usize) -> Result<()> {
        if !self.deps.contains(&from) {
            return Err(Error::Protocol {
                process: self.id,
                detail: format!("snapshot message from {from}, which is not an in-neighbor"),
            });
        }
        if self.record.deps.contains_key(&from) {
            return Err(Error::Protocol {
                process: self.id,
                detail: format!("duplicate snapshot message from {from} in epoch {}", self.epoch()),
            });
        }
        Ok(())
    }

    pub fn record_own(&mut self, ctx: &LocalContext<'_>, actions: &mut Vec<Action>, payload: bool) {
        self.record.own = Some(ctx.own_record());
        let epoch = self.epoch();
        actions.push(Action::Recorded { epoch });
        actions.push(Action::SendMarker { epoch, payload });
    }

    /// Contributes `r_i(x̄^(i))` once the record is complete.
    pub fn try_contribute(&mut self, ctx: &LocalContext<'_>, actions: &mut Vec<Action>) -> Result<()> {
        if self.contributed || !self.record.is_complete() {
            return Ok(());
        }
        self.record.refresh_status();
        let value = self.record.local_residual(ctx.problem, ctx.norm)?;
        self.contributed = true;
        let epoch = self.epoch();
        actions.push(Action::Status { epoch, status: SnapshotStatus::Complete });
        actions.push(Action::Contribute { epoch, value, valid: true });
        Ok(())
    }

    pub fn finish_round(&mut self, outcome: &RoundOutcome) {
        if outcome.epoch == self.epoch() && !outcome.terminate {
            self.reset(outcome.epoch + 1);
        }
    }
}

/// Exact snapshot under FIFO delivery. Recording starts on local convergence
/// or on the first marker; each marker records the last dependency data
/// delivered on its link.
#[derive(Debug, Clone)]
pub struct Exs {
    state: Epoch,
    epsilon: f64,
}

impl Exs {
    pub fn new(id: usize, deps: Vec<usize>, epsilon: f64) -> Self {
        Self { state: Epoch::new(id, deps), epsilon }
    }

    /// Records and broadcasts a marker unless already done this epoch.
    pub fn exs_on_trigger(&mut self, ctx: &LocalContext<'_>) -> Result<Vec<Action>> {
        let mut actions = Vec::new();
        if self.state.record.own.is_none() {
            self.state.record_own(ctx, &mut actions, false);
            self.state.try_contribute(ctx, &mut actions)?;
        }
        Ok(actions)
    }

    pub fn exs_on_marker(&mut self, ctx: &LocalContext<'_>, from: usize, epoch: u64) -> Result<Vec<Action>> {
        self.state.advance_to(epoch, "marker")?;
        self.state.check_duplicate(from)?;
        let mut actions = Vec::new();
        if self.state.record.own.is_none() {
            self.state.record_own(ctx, &mut actions, false);
        }
        self.state.record.deps.insert(from, ctx.dep_record(from));
        self.state.try_contribute(ctx, &mut actions)?;
        Ok(actions)
    }
}

impl Detector for Exs {
    fn protocol(&self) -> Protocol {
        Protocol::Exs
    }

    fn on_iterate(&mut self, ctx: &LocalContext<'_>) -> Result<Vec<Action>> {
        if ctx.local_residual < self.epsilon {
            self.exs_on_trigger(ctx)
        } else {
            Ok(Vec::new())
        }
    }

    fn on_trigger(&mut self, ctx: &LocalContext<'_>) -> Result<Vec<Action>> {
        self.exs_on_trigger(ctx)
    }

    fn on_marker(&mut self, ctx: &LocalContext<'_>, marker: MarkerInfo<'_>) -> Result<Vec<Action>> {
        if marker.payload.is_some() {
            return Err(Error::Protocol { process: ctx.id, detail: "EXS marker carries a payload".into() });
        }
        self.exs_on_marker(ctx, marker.from, marker.epoch)
    }

    fn on_confirm(&mut self, ctx: &LocalContext<'_>, from: usize, _epoch: u64, _flag: bool) -> Result<Vec<Action>> {
        Err(Error::Protocol { process: ctx.id, detail: format!("unexpected confirm from {from} under EXS") })
    }

    fn on_round_result(&mut self, _ctx: &LocalContext<'_>, outcome: &RoundOutcome) -> Result<Vec<Action>> {
        self.state.finish_round(outcome);
        Ok(Vec::new())
    }

    fn record(&self) -> Option<&SnapshotRecord> {
        Some(&self.state.record)
    }
}

/// Snapshot whose messages carry the sender's interface data, so the
/// receiver records exactly what the sender recorded regardless of ordering.
#[derive(Debug, Clone)]
pub struct Sbs {
    state: Epoch,
    epsilon: f64,
}

impl Sbs {
    pub fn new(id: usize, deps: Vec<usize>, epsilon: f64) -> Self {
        Self { state: Epoch::new(id, deps), epsilon }
    }

    pub fn sbs_on_local_convergence(&mut self, ctx: &LocalContext<'_>) -> Result<Vec<Action>> {
        let mut actions = Vec::new();
        if self.state.record.own.is_none() {
            self.state.record_own(ctx, &mut actions, true);
            self.state.try_contribute(ctx, &mut actions)?;
        }
        Ok(actions)
    }
}

impl Detector for Sbs {
    fn protocol(&self) -> Protocol {
        Protocol::Sbs
    }

    fn on_iterate(&mut self, ctx: &LocalContext<'_>) -> Result<Vec<Action>> {
        if ctx.local_residual < self.epsilon {
            self.sbs_on_local_convergence(ctx)
        } else {
            Ok(Vec::new())
        }
    }

    fn on_trigger(&mut self, ctx: &LocalContext<'_>) -> Result<Vec<Action>> {
        self.sbs_on_local_convergence(ctx)
    }

    fn on_marker(&mut self, ctx: &LocalContext<'_>, marker: MarkerInfo<'_>) -> Result<Vec<Action>> {
        let payload = marker.payload.ok_or_else(|| Error::Protocol {
            process: ctx.id,
            detail: format!("SBS snapshot message from {} without payload", marker.from),
        })?;
        self.state.advance_to(marker.epoch, "snapshot message")?;
        self.state.check_duplicate(marker.from)?;
        self.state
            .record
            .deps
            .insert(marker.from, super::DepRecord { values: payload.to_vec(), stamp: marker.sent_at });
        let mut actions = Vec::new();
        self.state.try_contribute(ctx, &mut actions)?;
        Ok(actions)
    }

    fn on_confirm(&mut self, ctx: &LocalContext<'_>, from: usize, _epoch: u64, _flag: bool) -> Result<Vec<Action>> {
        Err(Error::Protocol { process: ctx.id, detail: format!("unexpected confirm from {from} under SBS") })
    }

    fn on_round_result(&mut self, _ctx: &LocalContext<'_>, outcome: &RoundOutcome) -> Result<Vec<Action>> {
        self.state.finish_round(outcome);
        Ok(Vec::new())
    }

    fn record(&self) -> Option<&SnapshotRecord> {
        Some(&self.state.record)
    }
}
