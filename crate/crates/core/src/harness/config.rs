//! Declarative experiment configuration (TOML).

use serde::{Deserialize, Serialize};

use crate::detection::{BoundConstant, DetectionConfig, Protocol};
use crate::engine::replay::{Replay, ReplayReport, ScriptStep};
use crate::engine::{EngineConfig, Scenario};
use crate::error::{Error, Result};
use crate::fixedpoint::{FixedPointProblem, ResidualSpec};
use crate::oracle::EstimateMode;
use crate::problems::{build_linear_with, ConvDiffConfig, ConvDiffProblem, LinearFixedPoint, Structure};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ProblemSpec {
    /// Random sparse contraction `f(x) = Mx + c`.
    Linear {
        n: usize,
        alpha: f64,
        #[serde(default)]
        structure: Structure,
        /// Seed of the generator; the problem is the same for every run.
        #[serde(default)]
        seed: u64,
    },
    /// Jacobi map of a dense system `Ax = b`.
    Jacobi { a: Vec<Vec<f64>>, b: Vec<f64> },
    /// Explicit dense affine map `f(x) = Mx + c`.
    Affine { m: Vec<Vec<f64>>, c: Vec<f64> },
    /// Convection-diffusion, one backward Euler step, hybrid relaxation.
    Convdiff(ConvDiffConfig),
}

/// A built problem; keeps the assembled system for the benchmark so `r*`
/// can be reported as `‖Ax - b‖∞`.
#[derive(Debug, Clone)]
pub struct BuiltProblem {
    pub problem: FixedPointProblem,
    pub system: Option<ConvDiffProblem>,
}

impl BuiltProblem {
    /// `r*` of a delivered solution: the algebraic residual when a linear
    /// system is present, otherwise `r` in the configured norm.
    pub fn final_residual(&self, spec: &ResidualSpec, x: &[f64]) -> f64 {
        match &self.system {
            Some(sys) => sys.final_report_residual(x),
            None => self.problem.global_residual_raw(spec.norm, x),
        }
    }
}

impl ProblemSpec {
    pub fn build(&self, p: usize) -> Result<BuiltProblem> {
        match self {
            ProblemSpec::Linear { n, alpha, structure, seed } => Ok(BuiltProblem {
                problem: build_linear_with(*n, p, *alpha, *seed, *structure)?.problem(p)?,
                system: None,
            }),
            ProblemSpec::Jacobi { a, b } => {
                Ok(BuiltProblem { problem: LinearFixedPoint::jacobi(a, b)?.problem(p)?, system: None })
            }
            ProblemSpec::Affine { m, c } => {
                Ok(BuiltProblem { problem: LinearFixedPoint::dense(m, c)?.problem(p)?, system: None })
            }
            ProblemSpec::Convdiff(cfg) => {
                let sys = ConvDiffProblem::assemble(&cfg.clone().with_processes(p), None)?;
                Ok(BuiltProblem { problem: sys.problem()?, system: Some(sys) })
            }
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            ProblemSpec::Linear { n, .. } => *n,
            ProblemSpec::Jacobi { b, .. } => b.len(),
            ProblemSpec::Affine { c, .. } => c.len(),
            ProblemSpec::Convdiff(cfg) => cfg.nx.pow(3),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub protocols: Vec<Protocol>,
    pub epsilons: Vec<f64>,
    pub processes: Vec<usize>,
    /// NFAIS persistence values; empty means the detection section's value.
    pub persistences: Vec<usize>,
    pub seeds: Vec<u64>,
    pub master_seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            protocols: vec![Protocol::Pfait],
            epsilons: vec![1e-7],
            processes: vec![4],
            persistences: Vec::new(),
            seeds: (0..4).collect(),
            master_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimateConfig {
    /// Seeds `first_seed .. first_seed + runs` estimate `c`.
    pub runs: u64,
    pub first_seed: u64,
    /// Holdout runs on the seeds right after the estimation batch.
    pub validate_runs: u64,
    pub mode: EstimateMode,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        Self { runs: 100, first_seed: 1_000_000, validate_runs: 0, mode: EstimateMode::Max }
    }
}

impl EstimateConfig {
    pub fn estimation_seeds(&self) -> Vec<u64> {
        (self.first_seed..self.first_seed + self.runs).collect()
    }

    pub fn validation_seeds(&self) -> Vec<u64> {
        let start = self.first_seed + self.runs;
        (start..start + self.validate_runs).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OutputConfig {
    pub dir: String,
    pub csv: String,
    /// Write one event log and protocol trace per run.
    pub logs: bool,
    /// Add a wall-clock column (not normative; breaks byte-identical CSVs).
    pub wall_clock: bool,
    /// Export the assembled matrix in coordinate text format.
    pub matrix: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: "out".into(), csv: "reports.csv".into(), logs: false, wall_clock: false, matrix: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub problem: ProblemSpec,
    #[serde(default)]
    pub residual: ResidualSpec,
    #[serde(default)]
    pub detection: DetectionConfig,
    #[serde(default)]
    pub engine: EngineConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub estimate: EstimateConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

/// One point of the sweep before seeds are applied.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub protocol: Protocol,
    pub epsilon: f64,
    pub p: usize,
    pub persistence: usize,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn points(&self) -> Vec<SweepPoint> {
        let ms = if self.sweep.persistences.is_empty() {
            vec![self.detection.persistence]
        } else {
            self.sweep.persistences.clone()
        };
        let mut out = Vec::new();
        for &protocol in &self.sweep.protocols {
            for &epsilon in &self.sweep.epsilons {
                for &p in &self.sweep.processes {
                    // persistence only matters for NFAIS
                    let ms: &[usize] = if protocol == Protocol::Nfais { &ms } else { &ms[..1] };
                    for &persistence in ms {
                        out.push(SweepPoint { protocol, epsilon, p, persistence });
                    }
                }
            }
        }
        out
    }

    pub fn detection_for(&self, point: &SweepPoint) -> DetectionConfig {
        let mut d = self.detection.clone();
        d.protocol = point.protocol;
        d.epsilon = point.epsilon;
        d.persistence = point.persistence;
        if point.protocol != Protocol::Nfais && d.bound == BoundConstant::Estimate {
            d.bound = BoundConstant::Fixed(0.0);
        }
        d
    }

    pub fn scenario(&self, point: &SweepPoint) -> Result<(Scenario, BuiltProblem)> {
        let built = self.problem.build(point.p)?;
        let scenario = Scenario::new(built.problem.clone(), self.residual, self.detection_for(point))
            .with_engine(self.engine.clone());
        Ok((scenario, built))
    }

    /// Rejects the whole configuration before anything runs.
    pub fn validate(&self) -> Result<()> {
        if self.sweep.protocols.is_empty() || self.sweep.epsilons.is_empty() || self.sweep.processes.is_empty() {
            return Err(Error::Config("sweep axes protocols, epsilons and processes must be non-empty".into()));
        }
        for point in self.points() {
            if point.p == 0 || point.p > self.problem.dim() {
                return Err(Error::Config(format!("p={} does not fit a problem of size {}", point.p, self.problem.dim())));
            }
            let mut det = self.detection_for(&point);
            if det.bound == BoundConstant::Estimate {
                // resolved later by estimation
                det.bound = BoundConstant::Fixed(0.0);
            }
            det.validate().map_err(|e| Error::Config(format!("{} eps={}: {e}", point.protocol, point.epsilon)))?;
            let (mut s, _) = self.scenario(&point)?;
            s.detection = det;
            s.validate()?;
        }
        Ok(())
    }
}

/// A scripted execution: problem, protocol and the step list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayConfig {
    pub problem: ProblemSpec,
    pub processes: usize,
    #[serde(default)]
    pub residual: ResidualSpec,
    #[serde(default)]
    pub detection: DetectionConfig,
    /// `x⁰`; zero when absent.
    #[serde(default)]
    pub initial: Option<Vec<f64>>,
    pub steps: Vec<String>,
}

impl ReplayConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn scenario(&self) -> Result<Scenario> {
        let built = self.problem.build(self.processes)?;
        let engine = EngineConfig { initial: self.initial.clone(), ..EngineConfig::default() };
        Ok(Scenario::new(built.problem, self.residual, self.detection.clone()).with_engine(engine))
    }

    pub fn parsed_steps(&self) -> Result<Vec<ScriptStep>> {
        self.steps.iter().map(|s| s.parse()).collect()
    }

    pub fn replay(&self) -> Result<ReplayReport> {
        let scenario = self.scenario()?;
        let steps = self.parsed_steps()?;
        let mut replay = Replay::new(&scenario)?;
        replay.run_script(&steps)?;
        Ok(replay.finish())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
[problem]
kind = "linear"
n = 16
alpha = 0.5

[residual]
norm = "max"

[detection]
target = 1e-6
persistence = 2

[engine]
max_events = 100000

[engine.delivery]
out_of_order = 2

[sweep]
protocols = ["pfait", "nfais", "sbs"]
epsilons = [1e-7]
processes = [2, 4]
persistences = [2, 5]
seeds = [0, 1]
master_seed = 7
"#;

    #[test]
    fn parses_and_round_trips() {
        let cfg = ExperimentConfig::from_toml(SAMPLE).unwrap();
        assert_eq!(cfg.sweep.protocols.len(), 3);
        assert_eq!(cfg.engine.delivery.out_of_order, 2);
        let again = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(again, cfg);
        // pfait x2 + nfais x2 x2 + sbs x2
        assert_eq!(cfg.points().len(), 8);
        cfg.validate().unwrap();
    }

    #[test]
    fn convdiff_spec_parses() {
        let cfg = ExperimentConfig::from_toml("[problem]\nkind = \"convdiff\"\nnx = 8\n").unwrap();
        let ProblemSpec::Convdiff(c) = &cfg.problem else { panic!() };
        assert_eq!(c.nx, 8);
        assert_eq!(c.nu, 1.0);
        assert_eq!(cfg.problem.dim(), 512);
    }

    #[test]
    fn exs_with_reordering_rejected_up_front() {
        let mut cfg = ExperimentConfig::from_toml(SAMPLE).unwrap();
        cfg.sweep.protocols = vec![Protocol::Exs];
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }
}
