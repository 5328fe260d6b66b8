use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use super::RunRow;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Axis {
    Protocol,
    M,
    Epsilon,
    Target,
    C,
    P,
    N,
    Seed,
}

impl Axis {
    const ALL: [Axis; 8] = [Axis::Protocol, Axis::M, Axis::Epsilon, Axis::Target, Axis::C, Axis::P, Axis::N, Axis::Seed];

    pub fn name(&self) -> &'static str {
        match self {
            Axis::Protocol => "protocol",
            Axis::M => "m",
            Axis::Epsilon => "epsilon",
            Axis::Target => "target",
            Axis::C => "c",
            Axis::P => "p",
            Axis::N => "n",
            Axis::Seed => "seed",
        }
    }

    fn key(&self, r: &RunRow) -> Key {
        match self {
            Axis::Protocol => Key::Text(r.protocol.name().to_string()),
            Axis::M => Key::Num(r.m as f64),
            Axis::Epsilon => Key::Num(r.epsilon),
            Axis::Target => Key::Num(r.target),
            Axis::C => Key::Num(r.c),
            Axis::P => Key::Num(r.p as f64),
            Axis::N => Key::Num(r.n as f64),
            Axis::Seed => Key::Num(r.seed as f64),
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        let s = if s == "eps" { "epsilon" } else { s.as_str() };
        Axis::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown axis `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stat {
    Min,
    Max,
    Mean,
}

impl FromStr for Stat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "min" => Ok(Stat::Min),
            "max" => Ok(Stat::Max),
            "mean" => Ok(Stat::Mean),
            other => Err(Error::Parse(format!("unknown statistic `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Key {
    Num(f64),
    Text(String),
}

impl Eq for Key {}

impl PartialOrd for Key {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Key {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Key::Num(a), Key::Num(b)) => a.total_cmp(b),
            (Key::Text(a), Key::Text(b)) => a.cmp(b),
            (Key::Num(_), Key::Text(_)) => Ordering::Less,
            (Key::Text(_), Key::Num(_)) => Ordering::Greater,
        }
    }
}

impl Key {
    fn cell(&self) -> Cell {
        match self {
            Key::Num(v) if v.fract() == 0.0 && v.abs() < 1e15 => Cell::Int(*v as i64),
            Key::Num(v) => Cell::Float(*v),
            Key::Text(t) => Cell::Text(t.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Text(String),
    Int(i64),
    Float(f64),
}

impl Cell {
    fn render(&self, precise: bool) -> String {
        match self {
            Cell::Text(t) => t.clone(),
            Cell::Int(v) => v.to_string(),
            Cell::Float(v) if precise => format!("{v:.16e}"),
            Cell::Float(v) => format!("{v:.4e}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Error::Io(e.to_string());
        w.write_record(&self.header).map_err(io)?;
        for row in &self.rows {
            w.write_record(row.iter().map(|c| c.render(true))).map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Io(e.to_string()))
    }

    /// Fixed-width text: text columns left-aligned, numbers right-aligned.
    pub fn to_aligned(&self) -> String {
        let cells: Vec<Vec<String>> = self.rows.iter().map(|r| r.iter().map(|c| c.render(false)).collect()).collect();
        let widths: Vec<usize> = (0..self.header.len())
            .map(|j| cells.iter().map(|r| r[j].chars().count()).chain([self.header[j].chars().count()]).max().unwrap_or(0))
            .collect();
        let numeric: Vec<bool> =
            (0..self.header.len()).map(|j| self.rows.iter().all(|r| !matches!(r[j], Cell::Text(_)))).collect();
        let line = |vals: &[String]| {
            vals.iter()
                .enumerate()
                .map(|(j, v)| if numeric[j] { format!("{v:>w$}", w = widths[j]) } else { format!("{v:<w$}", w = widths[j]) })
                .collect::<Vec<_>>()
                .join("  ")
                .trim_end()
                .to_string()
        };
        let mut out = line(&self.header);
        out.push('\n');
        out.push_str(&widths.iter().map(|&w| "-".repeat(w)).collect::<Vec<_>>().join("  "));
        out.push('\n');
        for r in &cells {
            out.push_str(&line(r));
            out.push('\n');
        }
        out
    }
}

type Groups<'a> = BTreeMap<Vec<Key>, Vec<&'a RunRow>>;

/// Groups rows by `group_by` in ascending key order. Every other axis except
/// the seed must be constant within a group.
fn group<'a>(rows: &'a [RunRow], group_by: &[Axis]) -> Result<Groups<'a>> {
    let mut groups: Groups<'a> = BTreeMap::new();
    for r in rows {
        groups.entry(group_by.iter().map(|a| a.key(r)).collect()).or_default().push(r);
    }
    for (key, members) in &groups {
        for axis in Axis::ALL.into_iter().filter(|a| *a != Axis::Seed && !group_by.contains(a)) {
            let first = axis.key(members[0]);
            if members.iter().any(|r| axis.key(r) != first) {
                let label: Vec<String> =
                    group_by.iter().zip(key).map(|(a, k)| format!("{a}={}", k.cell().render(false))).collect();
                return Err(Error::Table(format!(
                    "axis `{axis}` varies within group [{}]; add it to the grouping",
                    label.join(", ")
                )));
            }
        }
    }
    Ok(groups)
}

/// One row per group: `r*` statistics, mean events and max `k_max`.
/// Runs that errored are excluded; timeouts are counted and included.
pub fn emit_table(rows: &[RunRow], group_by: &[Axis], stats: &[Stat]) -> Result<Table> {
    let usable: Vec<RunRow> = rows.iter().filter(|r| r.r_star.is_some()).cloned().collect();
    if usable.is_empty() {
        return Err(Error::Table("no completed runs to tabulate".into()));
    }
    let stats = if stats.is_empty() { &[Stat::Min, Stat::Max][..] } else { stats };
    let groups = group(&usable, group_by)?;
    let mut header: Vec<String> = group_by.iter().map(|a| a.name().to_string()).collect();
    header.push("runs".into());
    for s in stats {
        header.push(match s {
            Stat::Min => "min r*",
            Stat::Max => "max r*",
            Stat::Mean => "mean r*",
        }
        .into());
    }
    header.extend(["mean events", "max k_max", "timeouts"].map(String::from));
    let mut out = Vec::new();
    for (key, members) in groups {
        let r: Vec<f64> = members.iter().filter_map(|m| m.r_star).collect();
        let mut row: Vec<Cell> = key.iter().map(Key::cell).collect();
        row.push(Cell::Int(members.len() as i64));
        for s in stats {
            row.push(Cell::Float(match s {
                Stat::Min => r.iter().copied().fold(f64::INFINITY, f64::min),
                Stat::Max => r.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                Stat::Mean => r.iter().sum::<f64>() / r.len() as f64,
            }));
        }
        row.push(Cell::Float(members.iter().map(|m| m.events as f64).sum::<f64>() / members.len() as f64));
        row.push(Cell::Int(members.iter().map(|m| m.k_max).max().unwrap_or(0) as i64));
        row.push(Cell::Int(members.iter().filter(|m| m.verdict == "timeout").count() as i64));
        out.push(row);
    }
    Ok(Table { header, rows: out })
}

/// Detection traffic per protocol: snapshot messages, payload bytes
/// against the interface bytes they would need, and reduction fragments.
pub fn overhead_report(rows: &[RunRow]) -> Result<Table> {
    if rows.is_empty() {
        return Err(Error::Table("no reports".into()));
    }
    let mut groups: BTreeMap<(String, usize), Vec<&RunRow>> = BTreeMap::new();
    for r in rows {
        groups.entry((r.protocol.name().to_string(), r.m)).or_default().push(r);
    }
    let header = [
        "protocol",
        "m",
        "runs",
        "snapshot messages",
        "snapshot payload bytes",
        "snapshot interface bytes",
        "fragments",
        "computation bytes",
    ]
    .map(String::from)
    .to_vec();
    let rows = groups
        .into_iter()
        .map(|((protocol, m), members)| {
            let sum = |f: fn(&RunRow) -> u64| Cell::Int(members.iter().map(|r| f(r)).sum::<u64>() as i64);
            vec![
                Cell::Text(protocol),
                Cell::Int(m as i64),
                Cell::Int(members.len() as i64),
                sum(|r| r.markers + r.confirms),
                sum(|r| r.snapshot_payload_bytes),
                sum(|r| r.snapshot_interface_bytes),
                sum(|r| r.fragments),
                sum(|r| r.computation_bytes),
            ]
        })
        .collect();
    Ok(Table { header, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detection::Protocol;

    fn row(protocol: Protocol, p: usize, seed: u64, r: f64) -> RunRow {
        RunRow {
            run: 0,
            protocol,
            m: 2,
            epsilon: 1e-7,
            target: 1e-6,
            c: 0.0,
            p,
            n: 64,
            seed,
            run_seed: seed,
            verdict: "terminated".into(),
            r_star: Some(r),
            reported: Some(r),
            cut_residual: None,
            k_max: 10 * p as u64,
            events: 100,
            ticks: 10,
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
        }
    }

    #[test]
    fn single_run_min_equals_max() {
        let t = emit_table(&[row(Protocol::Pfait, 4, 0, 3e-7)], &[Axis::Protocol], &[Stat::Min, Stat::Max]).unwrap();
        assert_eq!(t.rows[0][2], Cell::Float(3e-7));
        assert_eq!(t.rows[0][3], Cell::Float(3e-7));
    }

    #[test]
    fn groups_ascend() {
        let rows: Vec<_> = [16, 4, 8].iter().map(|&p| row(Protocol::Pfait, p, 0, 1e-7)).collect();
        let t = emit_table(&rows, &[Axis::P], &[Stat::Max]).unwrap();
        let ps: Vec<_> = t.rows.iter().map(|r| r[0].clone()).collect();
        assert_eq!(ps, vec![Cell::Int(4), Cell::Int(8), Cell::Int(16)]);
        assert!(t.to_aligned().lines().count() == 5);
    }

    #[test]
    fn varying_axis_is_named() {
        let rows = vec![row(Protocol::Pfait, 4, 0, 1e-7), row(Protocol::Pfait, 8, 1, 1e-7)];
        let err = emit_table(&rows, &[Axis::Protocol], &[Stat::Min]).unwrap_err();
        assert!(err.to_string().contains("axis `p`"), "{err}");
        assert!(emit_table(&[], &[Axis::P], &[Stat::Min]).is_err());
    }

    #[test]
    fn axis_and_stat_parsing() {
        assert_eq!("eps".parse::<Axis>().unwrap(), Axis::Epsilon);
        assert_eq!("P".parse::<Axis>().unwrap(), Axis::P);
        assert!("colour".parse::<Axis>().is_err());
        assert_eq!("mean".parse::<Stat>().unwrap(), Stat::Mean);
    }
}
