use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use asyncdetect::detection::Protocol;
use asyncdetect::harness::{
    emit_table, overhead_report, rows_from_csv, rows_to_csv, run_sweep, worker_pool, Axis, ExperimentConfig,
    ReplayConfig, Stat, Table,
};
use asyncdetect::oracle::{estimate_c, export_violations, validate_bound};
use asyncdetect::{Error, Result};

/// Asynchronous iterations with convergence detection, on a deterministic
/// simulator.
#[derive(Parser)]
#[command(name = "asyncdetect", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Run every sweep point and seed of a configuration.
    Run {
        config: PathBuf,
        /// Output directory; overrides the config.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
    /// Summarize a reports CSV.
    Table {
        reports: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "protocol,p")]
        group_by: Vec<String>,
        #[arg(long, value_delimiter = ',', default_value = "min,max")]
        stats: Vec<String>,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
        /// Detection-traffic report instead of residual statistics.
        #[arg(long)]
        overhead: bool,
    },
    /// Estimate the bound constant c(p, m) for each NFAIS point of a
    /// configuration, then validate it on a disjoint batch.
    EstimateC {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Replay a scripted execution.
    Replay {
        trace: PathBuf,
        /// Also print the event log.
        #[arg(long)]
        log: bool,
    },
    /// Export the assembled benchmark matrix in coordinate text format.
    Matrix {
        config: PathBuf,
        #[arg(long, default_value_t = 1)]
        p: usize,
    },
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn show(table: &Table, format: Format) -> Result<()> {
    match format {
        Format::Text => print!("{}", table.to_aligned()),
        Format::Csv => print!("{}", table.to_csv()?),
    }
    Ok(())
}

fn cmd_run(config: &Path, out: Option<PathBuf>, format: Format) -> Result<()> {
    let cfg = ExperimentConfig::load(config)?;
    let dir = out.unwrap_or_else(|| PathBuf::from(&cfg.output.dir));
    let res = run_sweep(&cfg)?;
    let csv_path = dir.join(&cfg.output.csv);
    write(&csv_path, &rows_to_csv(&res.rows)?)?;
    for art in &res.artifacts {
        write(&dir.join(format!("run-{:05}.log", art.run)), &art.log)?;
        write(&dir.join(format!("run-{:05}.trace", art.run)), &art.trace)?;
    }
    if cfg.output.matrix {
        if let Some(point) = cfg.points().first() {
            if let Some(sys) = cfg.problem.build(point.p)?.system {
                write(&dir.join("matrix.txt"), &sys.matrix().to_coordinate_text())?;
            }
        }
    }
    eprintln!("{} runs, reports in {}", res.rows.len(), csv_path.display());
    for r in res.rows.iter().filter(|r| !r.error.is_empty()) {
        eprintln!("run {} (seed {}) failed: {}", r.run, r.seed, r.error);
    }
    if res.rows.is_empty() {
        return Ok(());
    }
    let table = emit_table(&res.rows, &[Axis::Protocol, Axis::M, Axis::Epsilon, Axis::P], &[Stat::Min, Stat::Max]);
    match table {
        Ok(t) => show(&t, format)?,
        // every run failed; the CSV still records why
        Err(Error::Table(msg)) => eprintln!("{msg}"),
        Err(e) => return Err(e),
    }
    println!();
    show(&overhead_report(&res.rows)?, format)
}

fn cmd_table(reports: &Path, group_by: &[String], stats: &[String], format: Format, overhead: bool) -> Result<()> {
    let text = fs::read_to_string(reports).map_err(|e| Error::Io(format!("{}: {e}", reports.display())))?;
    let rows = rows_from_csv(&text)?;
    if rows.is_empty() {
        return Err(Error::Table(format!("{} holds no reports", reports.display())));
    }
    let table = if overhead {
        overhead_report(&rows)?
    } else {
        let axes = group_by.iter().map(|a| a.parse()).collect::<Result<Vec<Axis>>>()?;
        let stats = stats.iter().map(|s| s.parse()).collect::<Result<Vec<Stat>>>()?;
        emit_table(&rows, &axes, &stats)?
    };
    show(&table, format)
}

fn cmd_estimate(config: &Path, out: Option<PathBuf>) -> Result<()> {
    let cfg = ExperimentConfig::load(config)?;
    cfg.validate()?;
    let dir = out.unwrap_or_else(|| PathBuf::from(&cfg.output.dir));
    let points: Vec<_> = cfg.points().into_iter().filter(|p| p.protocol == Protocol::Nfais).collect();
    if points.is_empty() {
        return Err(Error::Config("no NFAIS point in the sweep".into()));
    }
    let pool = worker_pool()?;
    pool.install(|| {
        for point in points {
            let (scenario, _) = cfg.scenario(&point)?;
            let est = estimate_c(&scenario, &cfg.estimate.estimation_seeds(), cfg.estimate.mode)?;
            println!(
                "p={} m={} eps={:e} runs={} samples={} mode={} c_est={:.6e}",
                est.p,
                est.m,
                point.epsilon,
                est.run_count,
                est.samples.len(),
                est.mode,
                est.c_est
            );
            if cfg.estimate.validate_runs > 0 {
                let v = validate_bound(&scenario, &cfg.estimate.validation_seeds(), est.c_est)?;
                println!(
                    "  validation: runs={} confirmed={} checked={} bound_misses={} violations={}",
                    v.runs,
                    v.confirmed,
                    v.checked,
                    v.bound_misses,
                    v.violations.len()
                );
                let path = dir.join(format!("violations-p{}-m{}.log", est.p, est.m));
                write(&path, &export_violations(&v.violations))?;
            }
        }
        Ok(())
    })
}

fn cmd_replay(trace: &Path, show_log: bool) -> Result<()> {
    let cfg = ReplayConfig::load(trace)?;
    let scenario = cfg.scenario()?;
    let rep = cfg.replay()?;
    println!("iterations: {:?}", rep.iterations);
    let last_epoch = rep.observations.iter().map(|o| o.epoch + 1).max().unwrap_or(0);
    for epoch in 0..=last_epoch {
        let records = rep.epoch_records(epoch);
        if records.iter().all(Option::is_none) {
            continue;
        }
        println!("epoch {epoch}:");
        let cuts = rep.cuts(&scenario.problem, epoch)?;
        for (i, rec) in records.iter().enumerate() {
            let Some(rec) = rec else { continue };
            let own = rec.own.as_ref().map(|o| format!("{:?}@{}", o.values, o.stamp)).unwrap_or_else(|| "-".into());
            let deps: Vec<String> = rec.deps.iter().map(|(j, d)| format!("{j}:{:?}@{}", d.values, d.stamp)).collect();
            println!("  process {i}: {:?} own {own} deps [{}]", rec.status, deps.join(", "));
            if let Some(x) = &cuts[i] {
                println!("    cut {x:?}");
            }
        }
    }
    for obs in &rep.observations {
        println!(
            "round {}: reported {:e} valid {} terminate {} cut residual {:?} consistent {:?}",
            obs.epoch, obs.reported, obs.valid, obs.terminate, obs.cut_residual, obs.consistent
        );
    }
    println!("trace:");
    for t in &rep.trace {
        println!("  {t}");
    }
    if show_log {
        println!("log:");
        for e in &rep.log {
            println!("  {e}");
        }
    }
    Ok(())
}

fn cmd_matrix(config: &Path, p: usize) -> Result<()> {
    let cfg = ExperimentConfig::load(config)?;
    match cfg.problem.build(p)?.system {
        Some(sys) => {
            print!("{}", sys.matrix().to_coordinate_text());
            Ok(())
        }
        None => Err(Error::Config("matrix export needs a convdiff problem".into())),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, out, format } => cmd_run(&config, out, format),
        Command::Table { reports, group_by, stats, format, overhead } => {
            cmd_table(&reports, &group_by, &stats, format, overhead)
        }
        Command::EstimateC { config, out } => cmd_estimate(&config, out),
        Command::Replay { trace, log } => cmd_replay(&trace, log),
        Command::Matrix { config, p } => cmd_matrix(&config, p),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
