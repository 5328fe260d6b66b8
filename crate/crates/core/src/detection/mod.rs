//! Termination detection protocols behind one event-handler contract.
//!
//! Every handler is a per-process transition `(state, event) -> actions`.
//! Handlers see only their own process's data through [`LocalContext`];
//! the engine turns the returned [`Action`]s into messages.

mod nfais;
mod pfait;
pub mod record;
pub mod reduction;
mod snapshot;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fixedpoint::{FixedPointProblem, Norm};

pub use nfais::Nfais;
pub use pfait::Pfait;
pub use record::{approximate_residual, check_validated_termination, DepRecord, SnapshotRecord, SnapshotStatus};
pub use reduction::{
    pfait_launch_round, pfait_on_round_complete, tree_children, tree_parent, Contribution, ReductionNode,
    ReductionRound, RoundDecision, RoundOutcome,
};
pub use snapshot::{Exs, Sbs};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    /// Exact snapshot over FIFO links, empty markers.
    Exs,
    /// Snapshot whose messages carry the interface data.
    Sbs,
    /// Approximate non-FIFO snapshot with persistence and confirmation.
    Nfais,
    /// No snapshot: successive reductions of current local residuals.
    Pfait,
}

impl Protocol {
    pub const ALL: [Protocol; 4] = [Protocol::Exs, Protocol::Sbs, Protocol::Nfais, Protocol::Pfait];

    pub fn name(&self) -> &'static str {
        match self {
            Protocol::Exs => "exs",
            Protocol::Sbs => "sbs",
            Protocol::Nfais => "nfais",
            Protocol::Pfait => "pfait",
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Protocol::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Parse(format!("unknown protocol `{s}`")))
    }
}

/// The constant `c(p, m)` bounding `|r(x̄) - r̃|` in units of `ε`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BoundConstant {
    Fixed(f64),
    /// Resolved by the oracle's estimator before any run starts.
    Estimate,
}

impl Serialize for BoundConstant {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            BoundConstant::Fixed(c) => s.serialize_f64(*c),
            BoundConstant::Estimate => s.serialize_str("estimate"),
        }
    }
}

impl<'de> Deserialize<'de> for BoundConstant {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(c) => Ok(BoundConstant::Fixed(c)),
            Raw::Text(t) if t == "estimate" => Ok(BoundConstant::Estimate),
            Raw::Text(t) => Err(serde::de::Error::custom(format!("expected a number or \"estimate\", got `{t}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectionConfig {
    pub protocol: Protocol,
    /// Local convergence threshold, and the stopping threshold for EXS, SBS
    /// and PFAIT.
    pub epsilon: f64,
    /// Desired final precision `ε̃`.
    pub target: f64,
    /// Persistence parameter `m` (NFAIS).
    pub persistence: usize,
    pub bound: BoundConstant,
    /// NFAIS: replace `epsilon` by `target / (1 + c)`.
    pub auto_threshold: bool,
    /// PFAIT: local iterations between the end of one round and this
    /// process's next contribution.
    pub reduction_period: u64,
    /// PFAIT: only contribute while locally converged.
    pub skip_unconverged: bool,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self {
            protocol: Protocol::Pfait,
            epsilon: 1e-7,
            target: 1e-6,
            persistence: 2,
            bound: BoundConstant::Fixed(0.0),
            auto_threshold: false,
            reduction_period: 1,
            skip_unconverged: false,
        }
    }
}

impl DetectionConfig {
    pub fn new(protocol: Protocol, epsilon: f64) -> Self {
        Self { protocol, epsilon, target: epsilon, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0) || !(self.target >= 0.0) {
            return Err(Error::Config("thresholds must be non-negative".into()));
        }
        if self.effective_epsilon() > self.target {
            return Err(Error::Config(format!(
                "epsilon {} exceeds target precision {}",
                self.effective_epsilon(),
                self.target
            )));
        }
        if self.protocol == Protocol::Nfais && self.persistence < 1 {
            return Err(Error::Config("NFAIS persistence m must be >= 1".into()));
        }
        match self.bound {
            BoundConstant::Fixed(c) if !(c >= 0.0) || !c.is_finite() => {
                Err(Error::Config(format!("bound constant c={c} must be finite and >= 0")))
            }
            BoundConstant::Estimate if self.protocol == Protocol::Nfais => {
                Err(Error::Config("bound constant must be estimated before running".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn bound_value(&self) -> f64 {
        match self.bound {
            BoundConstant::Fixed(c) => c,
            BoundConstant::Estimate => 0.0,
        }
    }

    /// The local convergence threshold actually used.
    pub fn effective_epsilon(&self) -> f64 {
        if self.protocol == Protocol::Nfais && self.auto_threshold {
            self.target / (1.0 + self.bound_value())
        } else {
            self.epsilon
        }
    }

    /// Root-side stopping rule applied to a completed reduction.
    pub fn decide(&self, r_tilde: f64, valid: bool) -> bool {
        match self.protocol {
            Protocol::Exs | Protocol::Sbs => valid && r_tilde < self.effective_epsilon(),
            Protocol::Nfais => valid && check_validated_termination(r_tilde, self.target, self.bound_value()),
            Protocol::Pfait => pfait_on_round_complete(r_tilde, self.effective_epsilon()) == RoundDecision::Terminate,
        }
    }

    /// Whether the protocol needs FIFO delivery of its own messages.
    pub fn requires_fifo(&self) -> bool {
        self.protocol == Protocol::Exs
    }
}

/// Read-only window onto one process, handed to protocol handlers.
#[derive(Clone, Copy)]
pub struct LocalContext<'a> {
    pub id: usize,
    /// Local iteration count `k^(i)`.
    pub iteration: u64,
    /// The process's local copy of the global vector.
    pub view: &'a [f64],
    /// Sender iteration of the dependency data currently held, per block.
    pub dep_stamps: &'a [u64],
    /// `r_i` on the current local view.
    pub local_residual: f64,
    pub problem: &'a FixedPointProblem,
    pub norm: Norm,
}

impl LocalContext<'_> {
    pub(crate) fn own_record(&self) -> DepRecord {
        DepRecord { values: self.view[self.problem.blocks().range(self.id)].to_vec(), stamp: self.iteration }
    }

    /// The last dependency data delivered from `from`.
    pub(crate) fn dep_record(&self, from: usize) -> DepRecord {
        let values = self.problem.interfaces().indices(from, self.id).iter().map(|&g| self.view[g]).collect();
        DepRecord { values, stamp: self.dep_stamps[from] }
    }
}

/// A snapshot message as seen by its receiver.
#[derive(Debug, Clone, Copy)]
pub struct MarkerInfo<'a> {
    pub from: usize,
    pub epoch: u64,
    /// Sender iteration when the marker was emitted.
    pub sent_at: u64,
    pub payload: Option<&'a [f64]>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    /// Own block recorded for `epoch` (trace only).
    Recorded { epoch: u64 },
    /// Snapshot message on every outgoing data link; with `payload` it carries
    /// the current interface data.
    SendMarker { epoch: u64, payload: bool },
    SendConfirm { epoch: u64, flag: bool },
    /// Local residual into the reduction tree.
    Contribute { epoch: u64, value: f64, valid: bool },
    /// Status change of the current record (trace only).
    Status { epoch: u64, status: SnapshotStatus },
}

pub trait Detector: Send + fmt::Debug {
    fn protocol(&self) -> Protocol;

    /// After every local update.
    fn on_iterate(&mut self, ctx: &LocalContext<'_>) -> Result<Vec<Action>>;

    /// Forced local convergence, used by scripted replays.
    fn on_trigger(&mut self, ctx: &LocalContext<'_>) -> Result<Vec<Action>>;

    fn on_marker(&mut self, ctx: &LocalContext<'_>, marker: MarkerInfo<'_>) -> Result<Vec<Action>>;

    fn on_confirm(&mut self, ctx: &LocalContext<'_>, from: usize, epoch: u64, flag: bool) -> Result<Vec<Action>>;

    fn on_round_result(&mut self, ctx: &LocalContext<'_>, outcome: &RoundOutcome) -> Result<Vec<Action>>;

    /// Current snapshot record, if the protocol keeps one.
    fn record(&self) -> Option<&SnapshotRecord>;
}

/// Builds the detector for process `id`.
pub fn make_detector(cfg: &DetectionConfig, id: usize, problem: &FixedPointProblem) -> Box<dyn Detector> {
    let deps = problem.interfaces().in_neighbors(id);
    let eps = cfg.effective_epsilon();
    match cfg.protocol {
        Protocol::Exs => Box::new(Exs::new(id, deps, eps)),
        Protocol::Sbs => Box::new(Sbs::new(id, deps, eps)),
        Protocol::Nfais => Box::new(Nfais::new(id, deps, eps, cfg.persistence as u64)),
        Protocol::Pfait => Box::new(Pfait::new(eps, cfg.reduction_period, cfg.skip_unconverged)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn protocol_names_round_trip() {
        for p in Protocol::ALL {
            assert_eq!(p.name().parse::<Protocol>().unwrap(), p);
        }
        assert!("chandy".parse::<Protocol>().is_err());
    }

    #[test]
    fn auto_threshold_scales_epsilon() {
        let cfg = DetectionConfig {
            protocol: Protocol::Nfais,
            target: 1e-6,
            bound: BoundConstant::Fixed(1.0),
            auto_threshold: true,
            ..Default::default()
        };
        assert_eq!(cfg.effective_epsilon(), 5e-7);
        assert!(cfg.validate().is_ok());
        assert!(cfg.decide(4e-7, true));
        assert!(!cfg.decide(4e-7, false));
        assert!(!cfg.decide(6e-7, true));
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut cfg = DetectionConfig::new(Protocol::Nfais, 1e-6);
        cfg.persistence = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = DetectionConfig::new(Protocol::Pfait, 1e-6);
        cfg.target = 1e-7;
        assert!(cfg.validate().is_err());
        let mut cfg = DetectionConfig::new(Protocol::Nfais, 1e-6);
        cfg.bound = BoundConstant::Estimate;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn bound_constant_parses_number_or_estimate() {
        #[derive(Deserialize)]
        struct W {
            c: BoundConstant,
        }
        let w: W = toml::from_str("c = 0.5").unwrap();
        assert_eq!(w.c, BoundConstant::Fixed(0.5));
        let w: W = toml::from_str("c = \"estimate\"").unwrap();
        assert_eq!(w.c, BoundConstant::Estimate);
        assert!(toml::from_str::<W>("c = \"guess\"").is_err());
    }
}
