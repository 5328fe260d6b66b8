//! Experiment sweeps and result tables.

pub mod config;
pub mod table;

use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize, Serializer};

use crate::detection::{BoundConstant, Protocol, SnapshotStatus};
use crate::engine::log::export_log;
use crate::engine::{export_trace, run, Scenario};
use crate::error::{Error, Result};
use crate::oracle::estimate_c;

pub use config::{BuiltProblem, ExperimentConfig, ProblemSpec, ReplayConfig, SweepPoint};
pub use table::{emit_table, overhead_report, Axis, Stat, Table};

/// Environment variable capping the number of sweep workers.
pub const WORKERS_ENV: &str = "ASYNCDETECT_WORKERS";

/// Thread pool sized by [`WORKERS_ENV`], defaulting to the available cores.
pub fn worker_pool() -> Result<rayon::ThreadPool> {
    let available = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let workers = match std::env::var(WORKERS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => n.min(available.max(1)),
            _ => return Err(Error::Config(format!("{WORKERS_ENV}=`{v}` is not a positive integer"))),
        },
        Err(_) => available,
    };
    rayon::ThreadPoolBuilder::new().num_threads(workers).build().map_err(|e| Error::Config(e.to_string()))
}

/// Per-run seed from the master seed and the run's seed value, so one run's
/// stream does not depend on which other runs are in the sweep.
pub fn derive_seed(master: u64, seed: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(seed);
    rng.next_u64()
}

fn sci<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&format!("{v:.16e}"))
}

fn sci_opt<S: Serializer>(v: &Option<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match v {
        Some(v) => sci(v, s),
        None => s.serialize_str(""),
    }
}

/// One CSV row per run. Floats carry 17 significant digits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub run: usize,
    pub protocol: Protocol,
    pub m: usize,
    #[serde(serialize_with = "sci")]
    pub epsilon: f64,
    #[serde(serialize_with = "sci")]
    pub target: f64,
    #[serde(serialize_with = "sci")]
    pub c: f64,
    pub p: usize,
    pub n: usize,
    pub seed: u64,
    pub run_seed: u64,
    /// `terminated`, `timeout` or `error`.
    pub verdict: String,
    #[serde(serialize_with = "sci_opt")]
    pub r_star: Option<f64>,
    #[serde(serialize_with = "sci_opt")]
    pub reported: Option<f64>,
    #[serde(serialize_with = "sci_opt")]
    pub cut_residual: Option<f64>,
    pub k_max: u64,
    pub events: u64,
    pub ticks: u64,
    pub computation_messages: u64,
    pub computation_bytes: u64,
    pub markers: u64,
    pub confirms: u64,
    pub fragments: u64,
    pub snapshot_payload_bytes: u64,
    pub snapshot_interface_bytes: u64,
    /// Snapshot statuses of every completed epoch, `;`-separated.
    pub status_history: String,
    pub error: String,
    /// Wall-clock seconds; non-normative, empty unless enabled.
    #[serde(serialize_with = "sci_opt", rename = "wtime_s_nonnormative")]
    pub wtime: Option<f64>,
}

pub fn rows_to_csv(rows: &[RunRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Io(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Io(e.to_string()))
}

pub fn rows_from_csv(text: &str) -> Result<Vec<RunRow>> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .enumerate()
        .map(|(i, r)| r.map_err(|e| Error::Parse(format!("reports row {}: {e}", i + 1))))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunArtifacts {
    pub run: usize,
    pub log: String,
    pub trace: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<RunRow>,
    /// Per-run event log and protocol trace, when enabled.
    pub artifacts: Vec<RunArtifacts>,
    /// Resolved bound constant per sweep point.
    pub bounds: Vec<(SweepPoint, f64)>,
}

fn status_name(s: SnapshotStatus) -> &'static str {
    match s {
        SnapshotStatus::Open => "open",
        SnapshotStatus::Complete => "complete",
        SnapshotStatus::Confirmed => "confirmed",
        SnapshotStatus::Discarded => "discarded",
    }
}

struct Prepared {
    point: SweepPoint,
    scenario: Scenario,
    built: BuiltProblem,
}

fn execute(cfg: &ExperimentConfig, prep: &Prepared, run_index: usize, seed: u64) -> (RunRow, Option<RunArtifacts>) {
    let run_seed = derive_seed(cfg.sweep.master_seed, seed);
    let det = &prep.scenario.detection;
    let mut row = RunRow {
        run: run_index,
        protocol: prep.point.protocol,
        m: prep.point.persistence,
        epsilon: prep.point.epsilon,
        target: det.target,
        c: det.bound_value(),
        p: prep.point.p,
        n: prep.scenario.problem.dim(),
        seed,
        run_seed,
        verdict: "error".into(),
        r_star: None,
        reported: None,
        cut_residual: None,
        k_max: 0,
        events: 0,
        ticks: 0,
        computation_messages: 0,
        computation_bytes: 0,
        markers: 0,
        confirms: 0,
        fragments: 0,
        snapshot_payload_bytes: 0,
        snapshot_interface_bytes: 0,
        status_history: String::new(),
        error: String::new(),
        wtime: None,
    };
    let start = Instant::now();
    let out = match run(&prep.scenario, run_seed) {
        Ok(out) => out,
        Err(e) => {
            row.error = e.to_string();
            return (row, None);
        }
    };
    if cfg.output.wall_clock {
        row.wtime = Some(start.elapsed().as_secs_f64());
    }
    let rep = &out.report;
    row.verdict = rep.verdict.to_string();
    row.r_star = Some(prep.built.final_residual(&prep.scenario.residual, &rep.solution));
    row.reported = rep.reported_residual;
    row.cut_residual = rep.cut_residual;
    row.k_max = rep.k_max();
    row.events = rep.events;
    row.ticks = rep.ticks;
    row.computation_messages = rep.messages.computation;
    row.computation_bytes = rep.messages.computation_bytes;
    row.markers = rep.messages.markers;
    row.confirms = rep.messages.confirms;
    row.fragments = rep.messages.fragments;
    row.snapshot_payload_bytes = rep.messages.snapshot_payload_bytes;
    row.snapshot_interface_bytes = rep.messages.snapshot_interface_bytes;
    row.status_history = rep.status_history().into_iter().map(status_name).collect::<Vec<_>>().join(";");
    let artifacts = cfg
        .output
        .logs
        .then(|| RunArtifacts { run: run_index, log: export_log(&out.log), trace: export_trace(&out.trace) });
    (row, artifacts)
}

/// Resolves `bound = "estimate"` for an NFAIS point with the estimation
/// batch from the config.
fn resolve_bound(cfg: &ExperimentConfig, scenario: &mut Scenario) -> Result<()> {
    if scenario.detection.protocol == Protocol::Nfais && scenario.detection.bound == BoundConstant::Estimate {
        let est = estimate_c(scenario, &cfg.estimate.estimation_seeds(), cfg.estimate.mode)?;
        scenario.detection.bound = BoundConstant::Fixed(est.c_est);
    }
    Ok(())
}

/// Runs every `(sweep point × seed)`. The config is validated first;
/// failures of individual runs land in their rows.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<SweepResult> {
    cfg.validate()?;
    let pool = worker_pool()?;
    pool.install(|| {
        let mut prepared = Vec::new();
        for point in cfg.points() {
            let (mut scenario, built) = cfg.scenario(&point)?;
            scenario.engine.record_log = cfg.output.logs;
            resolve_bound(cfg, &mut scenario)?;
            scenario.validate()?;
            prepared.push(Prepared { point, scenario, built });
        }
        let jobs: Vec<(usize, usize, u64)> = prepared
            .iter()
            .enumerate()
            .flat_map(|(pi, _)| cfg.sweep.seeds.iter().map(move |&s| (pi, s)))
            .enumerate()
            .map(|(run, (pi, s))| (run, pi, s))
            .collect();
        let results: Vec<_> = jobs.par_iter().map(|&(run, pi, seed)| execute(cfg, &prepared[pi], run, seed)).collect();
        let mut rows = Vec::with_capacity(results.len());
        let mut artifacts = Vec::new();
        for (row, art) in results {
            rows.push(row);
            artifacts.extend(art);
        }
        let bounds = prepared.iter().map(|p| (p.point, p.scenario.detection.bound_value())).collect();
        Ok(SweepResult { rows, artifacts, bounds })
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ExperimentConfig {
        ExperimentConfig::from_toml(
            r#"
[problem]
kind = "linear"
n = 12
alpha = 0.5
seed = 3

[detection]
target = 1e-6

[engine.delivery]
out_of_order = 1

[sweep]
protocols = ["pfait", "sbs"]
epsilons = [1e-7]
processes = [2, 3]
seeds = [0, 1]
master_seed = 5
"#,
        )
        .unwrap()
    }

    #[test]
    fn sweep_rows_round_trip_through_csv() {
        let res = run_sweep(&small()).unwrap();
        assert_eq!(res.rows.len(), 8);
        assert!(res.rows.iter().all(|r| r.verdict == "terminated"), "{:?}", res.rows);
        let text = rows_to_csv(&res.rows).unwrap();
        assert_eq!(rows_from_csv(&text).unwrap(), res.rows);
        assert_eq!(rows_to_csv(&run_sweep(&small()).unwrap().rows).unwrap(), text);
    }

    #[test]
    fn empty_seed_list_is_empty_success() {
        let mut cfg = small();
        cfg.sweep.seeds.clear();
        assert!(run_sweep(&cfg).unwrap().rows.is_empty());
    }

    #[test]
    fn derived_seeds_ignore_other_runs() {
        assert_eq!(derive_seed(1, 7), derive_seed(1, 7));
        assert_ne!(derive_seed(1, 7), derive_seed(2, 7));
        assert_ne!(derive_seed(1, 7), derive_seed(1, 8));
    }
}
