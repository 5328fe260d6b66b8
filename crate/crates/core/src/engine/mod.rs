//! Deterministic discrete-event simulation of `p` processes running
//! asynchronous iterations, plus a synchronous lockstep mode.
//!
//! Events are ordered by `(tick, insertion counter)` and every random draw
//! comes from one seeded stream, so a `(scenario, seed)` pair always produces
//! the same event log.

pub mod log;
pub mod network;
pub mod process;
pub mod replay;

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, VecDeque};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::detection::{
    make_detector, Action, DetectionConfig, Detector, LocalContext, MarkerInfo, Protocol, ReductionNode,
    RoundOutcome, SnapshotRecord, SnapshotStatus,
};
use crate::error::{Error, Result};
use crate::fixedpoint::{FixedPointProblem, Norm, ResidualSpec};
use crate::oracle::{self, CutView};

use log::{EventRecord, LogKind};
use network::{Channel, DeliveryModel, Envelope, EnvelopeKind, Network, Payload};
use process::{step_process, ProcessState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Asynchronous,
    /// Every process updates once per sweep from the same global iterate.
    Synchronous,
}

/// Adds `delta` to every entry of a process's block right after its
/// `iteration`-th update. Used to script convergence breaks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    pub process: usize,
    pub iteration: u64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub mode: Mode,
    pub delivery: DeliveryModel,
    /// Event budget; reaching it yields a timeout verdict.
    pub max_events: u64,
    /// One update takes a uniform `1..=compute_max` ticks.
    pub compute_max: u64,
    /// Maximum number of events between two updates of a live process;
    /// defaults to `16 p`.
    pub fairness_bound: Option<u64>,
    /// `x⁰`; zero when absent.
    pub initial: Option<Vec<f64>>,
    pub record_log: bool,
    pub perturbations: Vec<Perturbation>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Asynchronous,
            delivery: DeliveryModel::default(),
            max_events: 5_000_000,
            compute_max: 4,
            fairness_bound: None,
            initial: None,
            record_log: true,
            perturbations: Vec::new(),
        }
    }
}

/// Everything a run needs apart from the seed.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub problem: FixedPointProblem,
    pub residual: ResidualSpec,
    pub detection: DetectionConfig,
    pub engine: EngineConfig,
}

impl Scenario {
    pub fn new(problem: FixedPointProblem, residual: ResidualSpec, detection: DetectionConfig) -> Self {
        Self { problem, residual, detection, engine: EngineConfig::default() }
    }

    pub fn with_engine(mut self, engine: EngineConfig) -> Self {
        self.engine = engine;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.detection.validate()?;
        let n = self.problem.dim();
        if let Some(x0) = &self.engine.initial {
            if x0.len() != n {
                return Err(Error::Config(format!("initial vector has length {}, problem has {n}", x0.len())));
            }
        }
        if self.engine.compute_max == 0 {
            return Err(Error::Config("compute_max must be >= 1".into()));
        }
        if self.engine.mode == Mode::Asynchronous
            && self.detection.requires_fifo()
            && !self.engine.delivery.is_fifo()
        {
            return Err(Error::Config(format!(
                "{} needs FIFO links but the delivery model reorders up to {} messages",
                self.detection.protocol, self.engine.delivery.out_of_order
            )));
        }
        if let Some(b) = self.engine.fairness_bound {
            if b < self.problem.block_count() as u64 {
                return Err(Error::Config(format!(
                    "fairness bound {b} is below the process count {}",
                    self.problem.block_count()
                )));
            }
        }
        for pert in &self.engine.perturbations {
            if pert.process >= self.problem.block_count() || !pert.delta.is_finite() {
                return Err(Error::Config(format!("bad perturbation {pert:?}")));
            }
        }
        Ok(())
    }

    fn initial(&self) -> Vec<f64> {
        self.engine.initial.clone().unwrap_or_else(|| vec![0.0; self.problem.dim()])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Terminated,
    Timeout,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Terminated => "terminated",
            Verdict::Timeout => "timeout",
        })
    }
}

/// One completed reduction as seen by the root, with oracle measurements.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Observation {
    pub epoch: u64,
    pub tick: u64,
    /// `r̃` as reduced by the protocol.
    pub reported: f64,
    pub valid: bool,
    pub terminate: bool,
    /// Oracle residual on the cut the round describes. Always measured for
    /// snapshot protocols; for PFAIT only on the terminating round.
    pub cut_residual: Option<f64>,
    pub consistent: Option<bool>,
    /// Largest difference between a recorded dependency's sender iteration
    /// and the sender's own recorded iteration.
    pub max_stamp_gap: Option<u64>,
    pub status: Option<SnapshotStatus>,
    #[serde(skip)]
    pub records: Vec<SnapshotRecord>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct MessageStats {
    pub computation: u64,
    pub computation_bytes: u64,
    pub markers: u64,
    pub snapshot_payload_bytes: u64,
    /// Interface bytes the snapshot messages would need to carry the
    /// sender's interface data, for comparison with the payload bytes.
    pub snapshot_interface_bytes: u64,
    pub confirms: u64,
    pub fragments: u64,
}

impl MessageStats {
    /// Marker and confirm count.
    pub fn snapshot_messages(&self) -> u64 {
        self.markers + self.confirms
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub seed: u64,
    pub protocol: Protocol,
    pub verdict: Verdict,
    /// Oracle residual of the delivered solution.
    pub final_residual: f64,
    /// Protocol-reported residual of the terminating round.
    pub reported_residual: Option<f64>,
    /// Oracle residual of the cut behind the terminating round.
    pub cut_residual: Option<f64>,
    pub iterations: Vec<u64>,
    pub events: u64,
    pub ticks: u64,
    /// Largest number of events between two successive updates of a process.
    pub max_update_gap: u64,
    pub messages: MessageStats,
    pub observations: Vec<Observation>,
    #[serde(skip)]
    pub solution: Vec<f64>,
}

impl RunReport {
    pub fn k_max(&self) -> u64 {
        self.iterations.iter().copied().max().unwrap_or(0)
    }

    pub fn terminated(&self) -> bool {
        self.verdict == Verdict::Terminated
    }

    pub fn status_history(&self) -> Vec<SnapshotStatus> {
        self.observations.iter().filter_map(|o| o.status).collect()
    }
}

/// One protocol decision, for scripted-scenario checks.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    pub tick: u64,
    pub process: usize,
    pub iteration: u64,
    pub event: String,
}

impl fmt::Display for TraceEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {} {}", self.tick, self.process, self.iteration, self.event)
    }
}

pub fn export_trace(trace: &[TraceEntry]) -> String {
    trace.iter().map(|t| format!("{t}\n")).collect()
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: RunReport,
    pub log: Vec<EventRecord>,
    pub trace: Vec<TraceEntry>,
}

/// Runs the scenario to termination or timeout.
pub fn run(scenario: &Scenario, seed: u64) -> Result<RunOutput> {
    scenario.validate()?;
    let mut sim = Simulation::new(scenario, seed, false);
    let verdict = match scenario.engine.mode {
        Mode::Asynchronous => sim.run_async()?,
        Mode::Synchronous => sim.run_sync()?,
    };
    Ok(sim.finish(verdict))
}

#[derive(Debug)]
enum Event {
    Update { process: usize, generation: u64 },
    Deliver(Envelope),
}

#[derive(Debug)]
struct Scheduled {
    tick: u64,
    counter: u64,
    event: Event,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        (self.tick, self.counter) == (other.tick, other.counter)
    }
}

impl Eq for Scheduled {}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Scheduled {
    // reversed: BinaryHeap pops the earliest event first
    fn cmp(&self, other: &Self) -> Ordering {
        (other.tick, other.counter).cmp(&(self.tick, self.counter))
    }
}

/// Oracle-side copy of what each process fed into one reduction round.
#[derive(Debug, Default)]
struct RoundCapture {
    records: BTreeMap<usize, SnapshotRecord>,
    blocks: BTreeMap<usize, (Vec<f64>, u64)>,
}

/// Handler context for process `$i`, borrowing only the fields it needs so
/// a detector can be borrowed mutably alongside.
macro_rules! ctx {
    ($sim:ident, $i:expr) => {
        LocalContext {
            id: $i,
            iteration: $sim.procs[$i].iteration,
            view: &$sim.procs[$i].view,
            dep_stamps: &$sim.procs[$i].dep_stamps,
            local_residual: $sim.local_r[$i],
            problem: $sim.problem,
            norm: $sim.norm,
        }
    };
}

pub(crate) struct Simulation<'a> {
    scenario: &'a Scenario,
    problem: &'a FixedPointProblem,
    norm: Norm,
    procs: Vec<ProcessState>,
    detectors: Vec<Box<dyn Detector>>,
    nodes: Vec<ReductionNode>,
    /// `r_i` as of each process's last update.
    local_r: Vec<f64>,
    net: Network,
    queue: BinaryHeap<Scheduled>,
    counter: u64,
    rng: ChaCha8Rng,
    tick: u64,
    events: u64,
    generation: Vec<u64>,
    last_update: Vec<u64>,
    max_gap: u64,
    stopped: usize,
    log: Vec<EventRecord>,
    record_log: bool,
    trace: Vec<TraceEntry>,
    stats: MessageStats,
    captures: BTreeMap<u64, RoundCapture>,
    observations: Vec<Observation>,
    final_cut: Option<Vec<f64>>,
    /// Scripted mode keeps messages in per-link queues instead of scheduling.
    scripted: bool,
    pending: BTreeMap<(usize, usize, Channel), VecDeque<Envelope>>,
    seed: u64,
}

impl<'a> Simulation<'a> {
    pub(crate) fn new(scenario: &'a Scenario, seed: u64, scripted: bool) -> Self {
        let problem = &scenario.problem;
        let p = problem.block_count();
        let x0 = scenario.initial();
        let procs: Vec<_> = (0..p).map(|i| ProcessState::new(i, &x0, p)).collect();
        let local_r = (0..p).map(|i| problem.local_residual_raw(scenario.residual.norm, i, &x0)).collect();
        Self {
            scenario,
            problem,
            norm: scenario.residual.norm,
            procs,
            detectors: (0..p).map(|i| make_detector(&scenario.detection, i, problem)).collect(),
            nodes: (0..p).map(|i| ReductionNode::new(i, p)).collect(),
            local_r,
            net: Network::new(scenario.engine.delivery.clone()),
            queue: BinaryHeap::new(),
            counter: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            tick: 0,
            events: 0,
            generation: vec![0; p],
            last_update: vec![0; p],
            max_gap: 0,
            stopped: 0,
            log: Vec::new(),
            record_log: scenario.engine.record_log || scripted,
            trace: Vec::new(),
            stats: MessageStats::default(),
            captures: BTreeMap::new(),
            observations: Vec::new(),
            final_cut: None,
            scripted,
            pending: BTreeMap::new(),
            seed,
        }
    }

    fn p(&self) -> usize {
        self.procs.len()
    }

    fn push(&mut self, tick: u64, event: Event) {
        self.queue.push(Scheduled { tick, counter: self.counter, event });
        self.counter += 1;
    }

    fn schedule_update(&mut self, i: usize) {
        let d = self.rng.gen_range(1..=self.scenario.engine.compute_max);
        self.generation[i] += 1;
        let generation = self.generation[i];
        self.push(self.tick + d, Event::Update { process: i, generation });
    }

    fn record(&mut self, kind: LogKind, from: usize, to: usize, seq: u64, ks: u64, kr: u64) {
        if self.record_log {
            self.log.push(EventRecord { tick: self.tick, kind, from, to, seq, k_sender: ks, k_receiver: kr });
        }
    }

    fn note(&mut self, i: usize, event: String) {
        self.trace.push(TraceEntry { tick: self.tick, process: i, iteration: self.procs[i].iteration, event });
    }

    fn run_async(&mut self) -> Result<Verdict> {
        let p = self.p();
        let bound = self.scenario.engine.fairness_bound.unwrap_or(16 * p as u64);
        for i in 0..p {
            self.schedule_update(i);
        }
        while self.stopped < p {
            if self.events >= self.scenario.engine.max_events {
                return Ok(Verdict::Timeout);
            }
            // Processes within `p` events of the bound are forced, stalest
            // first; at most `p` can be waiting, so none overshoots.
            let due = (0..p)
                .filter(|&i| !self.procs[i].stopped && self.events + p as u64 - self.last_update[i] >= bound)
                .min_by_key(|&i| self.last_update[i]);
            if let Some(i) = due {
                self.events += 1;
                self.update(i)?;
                if !self.procs[i].stopped {
                    self.schedule_update(i);
                }
                continue;
            }
            let Some(next) = self.queue.pop() else {
                return Err(Error::Contract("event queue drained while processes are live".into()));
            };
            self.tick = self.tick.max(next.tick);
            match next.event {
                Event::Update { process, generation } => {
                    if self.procs[process].stopped || generation != self.generation[process] {
                        continue;
                    }
                    self.events += 1;
                    self.update(process)?;
                    if !self.procs[process].stopped {
                        self.schedule_update(process);
                    }
                }
                Event::Deliver(env) => {
                    self.events += 1;
                    self.deliver(env)?;
                }
            }
        }
        Ok(Verdict::Terminated)
    }

    /// Lockstep sweeps `x^{k+1} = f(x^k)`. Detection evaluates `σ` over
    /// `r_i(x^k)` before each sweep, which is what every protocol reports
    /// when all views agree.
    fn run_sync(&mut self) -> Result<Verdict> {
        let p = self.p();
        let cfg = &self.scenario.detection;
        let mut sweep = 0u64;
        loop {
            let x = self.procs[0].view.clone();
            let folded = (0..p).map(|i| self.problem.local_residual_raw(self.norm, i, &x)).fold(0.0, |a, b| self.norm.combine(a, b));
            let r = self.norm.finish(folded);
            let terminate = cfg.decide(r, true);
            self.observations.push(Observation {
                epoch: sweep,
                tick: self.tick,
                reported: r,
                valid: true,
                terminate,
                cut_residual: terminate.then_some(r),
                consistent: Some(true),
                max_stamp_gap: Some(0),
                status: None,
                records: Vec::new(),
            });
            if terminate {
                for s in &mut self.procs {
                    s.stopped = true;
                }
                self.stopped = p;
                self.final_cut = Some(x);
                return Ok(Verdict::Terminated);
            }
            if self.events + p as u64 > self.scenario.engine.max_events {
                return Ok(Verdict::Timeout);
            }
            self.tick += 1;
            for i in 0..p {
                step_process(&mut self.procs[i], self.problem)?;
                let k = self.procs[i].iteration;
                self.record(LogKind::Update, i, i, k, k, k);
            }
            let mut next = x;
            for s in &self.procs {
                let range = self.problem.blocks().range(s.id);
                next[range.clone()].copy_from_slice(&s.view[range]);
            }
            sweep += 1;
            for s in &mut self.procs {
                s.view.copy_from_slice(&next);
                s.dep_stamps.iter_mut().for_each(|k| *k = sweep);
            }
            self.events += p as u64;
        }
    }

    pub(crate) fn update(&mut self, i: usize) -> Result<()> {
        if self.procs[i].stopped {
            return Err(Error::Contract(format!("update of stopped process {i}")));
        }
        let gap = self.events - self.last_update[i];
        self.max_gap = self.max_gap.max(gap);
        self.last_update[i] = self.events;
        let outgoing = step_process(&mut self.procs[i], self.problem)?;
        let k = self.procs[i].iteration;
        let outgoing = if let Some(pert) =
            self.scenario.engine.perturbations.iter().find(|q| q.process == i && q.iteration == k)
        {
            let range = self.problem.blocks().range(i);
            self.procs[i].view[range].iter_mut().for_each(|v| *v += pert.delta);
            self.note(i, format!("perturb {}", pert.delta));
            // resend with the perturbed block
            outgoing
                .into_iter()
                .map(|mut env| {
                    env.payload = Payload::Block(self.procs[i].interface_for(self.problem, env.to));
                    env
                })
                .collect()
        } else {
            outgoing
        };
        self.record(LogKind::Update, i, i, k, k, k);
        for env in outgoing {
            self.send(env);
        }
        self.local_r[i] = self.problem.local_residual_raw(self.norm, i, &self.procs[i].view);
        let actions = self.detectors[i].on_iterate(&ctx!(self, i))?;
        self.execute(i, actions)
    }

    pub(crate) fn trigger(&mut self, i: usize) -> Result<()> {
        self.note(i, "trigger".into());
        let actions = self.detectors[i].on_trigger(&ctx!(self, i))?;
        self.execute(i, actions)
    }

    fn send(&mut self, mut env: Envelope) {
        let bytes = env.payload.bytes() as u64;
        match env.kind {
            EnvelopeKind::Computation => {
                self.stats.computation += 1;
                self.stats.computation_bytes += bytes;
            }
            EnvelopeKind::SnapshotMarker => {
                self.stats.markers += 1;
                self.stats.snapshot_payload_bytes += bytes;
            }
            EnvelopeKind::SnapshotConfirm => self.stats.confirms += 1,
            EnvelopeKind::ReductionFragment => self.stats.fragments += 1,
        }
        let when = if self.scripted {
            self.net.stamp(&mut env);
            None
        } else {
            Some(self.net.schedule(&mut env, self.tick, &mut self.rng))
        };
        let k_receiver = self.procs[env.to].iteration;
        self.record(LogKind::Send(env.kind), env.from, env.to, env.seq, env.sent_at_version, k_receiver);
        match when {
            Some(t) => self.push(t, Event::Deliver(env)),
            None => self.pending.entry((env.from, env.to, env.kind.channel())).or_default().push_back(env),
        }
    }

    pub(crate) fn deliver(&mut self, env: Envelope) -> Result<()> {
        let to = env.to;
        let k_receiver = self.procs[to].iteration;
        self.record(LogKind::Deliver(env.kind), env.from, to, env.seq, env.sent_at_version, k_receiver);
        if self.procs[to].stopped {
            return Ok(());
        }
        let actions = match (&env.kind, &env.payload) {
            (EnvelopeKind::Computation, _) => {
                self.procs[to].receive_computation(self.problem, &env);
                return Ok(());
            }
            (EnvelopeKind::SnapshotMarker, payload) => {
                let payload = match payload {
                    Payload::Block(v) => Some(v.as_slice()),
                    _ => None,
                };
                let marker = MarkerInfo { from: env.from, epoch: env.epoch, sent_at: env.sent_at_version, payload };
                self.detectors[to].on_marker(&ctx!(self, to), marker)?
            }
            (EnvelopeKind::SnapshotConfirm, Payload::Flag(flag)) => {
                self.detectors[to].on_confirm(&ctx!(self, to), env.from, env.epoch, *flag)?
            }
            (EnvelopeKind::ReductionFragment, Payload::Up { folded, valid }) => {
                return self.absorb(to, env.epoch, *folded, *valid);
            }
            (EnvelopeKind::ReductionFragment, Payload::Down(outcome)) => {
                return self.round_result(to, *outcome);
            }
            (kind, payload) => {
                return Err(Error::Protocol { process: to, detail: format!("{kind} envelope with payload {payload:?}") });
            }
        };
        self.execute(to, actions)
    }

    fn execute(&mut self, i: usize, actions: Vec<Action>) -> Result<()> {
        for action in actions {
            match action {
                Action::Recorded { epoch } => self.note(i, format!("record epoch={epoch}")),
                Action::Status { epoch, status } => self.note(i, format!("status epoch={epoch} {status:?}")),
                Action::SendMarker { epoch, payload } => {
                    self.note(i, format!("marker epoch={epoch}"));
                    for &to in self.problem.interfaces().out_neighbors(i) {
                        let interface = self.procs[i].interface_for(self.problem, to);
                        self.stats.snapshot_interface_bytes += 8 * interface.len() as u64;
                        let payload = if payload { Payload::Block(interface) } else { Payload::None };
                        self.send(self.envelope(EnvelopeKind::SnapshotMarker, i, to, epoch, payload));
                    }
                }
                Action::SendConfirm { epoch, flag } => {
                    self.note(i, format!("confirm epoch={epoch} flag={flag}"));
                    for &to in self.problem.interfaces().out_neighbors(i) {
                        self.send(self.envelope(EnvelopeKind::SnapshotConfirm, i, to, epoch, Payload::Flag(flag)));
                    }
                }
                Action::Contribute { epoch, value, valid } => {
                    self.note(i, format!("contribute epoch={epoch} value={value:e} valid={valid}"));
                    let capture = self.captures.entry(epoch).or_default();
                    match self.detectors[i].record() {
                        Some(rec) => {
                            capture.records.insert(i, rec.clone());
                        }
                        None => {
                            let s = &self.procs[i];
                            capture.blocks.insert(i, (s.block(self.problem).to_vec(), s.iteration));
                        }
                    }
                    self.absorb(i, epoch, value, valid)?;
                }
            }
        }
        Ok(())
    }

    fn envelope(&self, kind: EnvelopeKind, from: usize, to: usize, epoch: u64, payload: Payload) -> Envelope {
        Envelope { kind, from, to, seq: 0, epoch, sent_at_version: self.procs[from].iteration, payload }
    }

    fn absorb(&mut self, i: usize, epoch: u64, folded: f64, valid: bool) -> Result<()> {
        let Some((folded, valid)) = self.nodes[i].absorb(epoch, folded, valid, self.norm) else {
            return Ok(());
        };
        match self.nodes[i].parent {
            Some(parent) => {
                let env = self.envelope(EnvelopeKind::ReductionFragment, i, parent, epoch, Payload::Up { folded, valid });
                self.send(env);
                Ok(())
            }
            None => self.finalize(epoch, folded, valid),
        }
    }

    /// Root side: decide, measure the round with the oracle, broadcast.
    fn finalize(&mut self, epoch: u64, folded: f64, valid: bool) -> Result<()> {
        let reported = self.norm.finish(folded);
        let terminate = self.scenario.detection.decide(reported, valid);
        let capture = self.captures.remove(&epoch).unwrap_or_default();
        let spec = self.scenario.residual;
        let mut obs = Observation {
            epoch,
            tick: self.tick,
            reported,
            valid,
            terminate,
            cut_residual: None,
            consistent: None,
            max_stamp_gap: None,
            status: None,
            records: Vec::new(),
        };
        if capture.records.len() == self.p() {
            let records: Vec<SnapshotRecord> = capture.records.into_values().collect();
            let cut = CutView::from_records(&records, self.problem)?;
            obs.cut_residual = Some(oracle::oracle_residual_at_cut(&cut, self.problem, &spec)?);
            obs.consistent = Some(oracle::check_snapshot_consistency(&records, self.problem).is_consistent());
            obs.max_stamp_gap = Some(oracle::max_stamp_gap(&records));
            obs.status = Some(if records.iter().any(|r| r.status == SnapshotStatus::Discarded) {
                SnapshotStatus::Discarded
            } else {
                records[0].status
            });
            if terminate {
                self.final_cut = Some(cut.values.clone());
            }
            obs.records = records;
        } else if terminate && capture.blocks.len() == self.p() {
            let cut = CutView::from_blocks(capture.blocks.into_values().collect(), self.problem)?;
            obs.cut_residual = Some(oracle::oracle_residual_at_cut(&cut, self.problem, &spec)?);
        }
        self.note(0, format!("round epoch={epoch} value={reported:e} valid={valid} terminate={terminate}"));
        self.observations.push(obs);
        self.round_result(0, RoundOutcome { epoch, value: reported, valid, terminate })
    }

    fn round_result(&mut self, i: usize, outcome: RoundOutcome) -> Result<()> {
        let actions = self.detectors[i].on_round_result(&ctx!(self, i), &outcome)?;
        self.execute(i, actions)?;
        for c in self.nodes[i].children.clone() {
            let env = self.envelope(EnvelopeKind::ReductionFragment, i, c, outcome.epoch, Payload::Down(outcome));
            self.send(env);
        }
        if outcome.terminate && !self.procs[i].stopped {
            self.procs[i].stopped = true;
            self.stopped += 1;
            self.note(i, "stop".into());
        }
        Ok(())
    }

    /// Solution delivered to the user: the recorded cut behind the
    /// terminating snapshot, otherwise each process's own block.
    fn solution(&self) -> Vec<f64> {
        if let Some(cut) = &self.final_cut {
            return cut.clone();
        }
        let mut x = vec![0.0; self.problem.dim()];
        for s in &self.procs {
            let range = self.problem.blocks().range(s.id);
            x[range.clone()].copy_from_slice(&s.view[range]);
        }
        x
    }

    pub(crate) fn finish(self, verdict: Verdict) -> RunOutput {
        let solution = self.solution();
        let final_residual = self.problem.global_residual_raw(self.norm, &solution);
        let last = self.observations.iter().rev().find(|o| o.terminate);
        let report = RunReport {
            seed: self.seed,
            protocol: self.scenario.detection.protocol,
            verdict,
            final_residual,
            reported_residual: last.map(|o| o.reported),
            cut_residual: last.and_then(|o| o.cut_residual),
            iterations: self.procs.iter().map(|s| s.iteration).collect(),
            events: self.events,
            ticks: self.tick,
            max_update_gap: self.max_gap,
            messages: self.stats,
            observations: self.observations,
            solution,
        };
        RunOutput { report, log: self.log, trace: self.trace }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::linear::{build_linear, LinearFixedPoint};

    fn jacobi2() -> FixedPointProblem {
        LinearFixedPoint::jacobi(&[vec![2.0, 1.0], vec![1.0, 2.0]], &[3.0, 3.0]).unwrap().problem(2).unwrap()
    }

    #[test]
    fn synchronous_jacobi_reaches_tolerance() {
        let mut det = DetectionConfig::new(Protocol::Pfait, 1e-10);
        det.target = 1e-10;
        let s = Scenario::new(jacobi2(), ResidualSpec::max(), det)
            .with_engine(EngineConfig { mode: Mode::Synchronous, ..Default::default() });
        let out = run(&s, 1).unwrap();
        assert!(out.report.terminated());
        assert!(out.report.final_residual < 1e-10);
        // error halves each sweep from 1: about 34 sweeps
        assert!(out.report.k_max() > 20 && out.report.k_max() < 60);
    }

    #[test]
    fn zero_map_converges_in_one_sweep() {
        let lin = build_linear(6, 3, 0.0, 4).unwrap();
        let s = Scenario::new(lin.problem(3).unwrap(), ResidualSpec::max(), DetectionConfig::new(Protocol::Pfait, 1e-12))
            .with_engine(EngineConfig { mode: Mode::Synchronous, ..Default::default() });
        let out = run(&s, 0).unwrap();
        assert_eq!(out.report.iterations, vec![1, 1, 1]);
        assert_eq!(out.report.solution, lin.exact_solution());
    }

    #[test]
    fn async_runs_terminate_for_every_protocol() {
        let lin = build_linear(12, 4, 0.5, 9).unwrap();
        for protocol in Protocol::ALL {
            let mut det = DetectionConfig::new(protocol, 1e-8);
            det.target = 1e-6;
            let delivery = if protocol == Protocol::Exs { DeliveryModel::fifo() } else { DeliveryModel::bounded(2) };
            let s = Scenario::new(lin.problem(4).unwrap(), ResidualSpec::l2(), det)
                .with_engine(EngineConfig { delivery, ..Default::default() });
            let out = run(&s, 3).unwrap();
            assert!(out.report.terminated(), "{protocol}");
            assert!(out.report.final_residual < 1e-6, "{protocol}: {}", out.report.final_residual);
        }
    }

    #[test]
    fn exs_refuses_reordering_links() {
        let s = Scenario::new(jacobi2(), ResidualSpec::max(), DetectionConfig::new(Protocol::Exs, 1e-8))
            .with_engine(EngineConfig { delivery: DeliveryModel::bounded(1), ..Default::default() });
        assert!(matches!(run(&s, 0), Err(Error::Config(_))));
    }

    #[test]
    fn timeout_is_a_verdict() {
        let s = Scenario::new(jacobi2(), ResidualSpec::max(), DetectionConfig::new(Protocol::Pfait, 0.0))
            .with_engine(EngineConfig { max_events: 500, ..Default::default() });
        let out = run(&s, 0).unwrap();
        assert_eq!(out.report.verdict, Verdict::Timeout);
        assert_eq!(out.report.events, 500);
    }

    #[test]
    fn fairness_bound_holds() {
        let lin = build_linear(16, 8, 0.9, 2).unwrap();
        let s = Scenario::new(lin.problem(8).unwrap(), ResidualSpec::l2(), DetectionConfig::new(Protocol::Pfait, 1e-9))
            .with_engine(EngineConfig { fairness_bound: Some(10), ..Default::default() });
        let out = run(&s, 11).unwrap();
        assert!(out.report.max_update_gap <= 10);
    }
}
