//! Event log export and the post-hoc delivery validator.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use super::network::{Channel, EnvelopeKind};
use crate::error::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LogKind {
    Update,
    Send(EnvelopeKind),
    Deliver(EnvelopeKind),
}

impl fmt::Display for LogKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LogKind::Update => f.write_str("update"),
            LogKind::Send(k) => write!(f, "send.{k}"),
            LogKind::Deliver(k) => write!(f, "deliver.{k}"),
        }
    }
}

impl FromStr for LogKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        if s == "update" {
            return Ok(LogKind::Update);
        }
        let bad = || Error::Parse(format!("unknown event kind `{s}`"));
        let (verb, kind) = s.split_once('.').ok_or_else(bad)?;
        let kind = EnvelopeKind::parse(kind).ok_or_else(bad)?;
        match verb {
            "send" => Ok(LogKind::Send(kind)),
            "deliver" => Ok(LogKind::Deliver(kind)),
            _ => Err(bad()),
        }
    }
}

/// One line of the event log: `tick kind from->to seq k_sender k_receiver`.
/// For updates the link is `i->i` and `seq` is the new iteration count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EventRecord {
    pub tick: u64,
    pub kind: LogKind,
    pub from: usize,
    pub to: usize,
    pub seq: u64,
    pub k_sender: u64,
    pub k_receiver: u64,
}

impl fmt::Display for EventRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} {}->{} {} {} {}",
            self.tick, self.kind, self.from, self.to, self.seq, self.k_sender, self.k_receiver
        )
    }
}

impl FromStr for EventRecord {
    type Err = Error;

    fn from_str(line: &str) -> Result<Self, Error> {
        let bad = |what: &str| Error::Parse(format!("{what} in log line `{line}`"));
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 6 {
            return Err(bad("expected 6 fields"));
        }
        let num = |s: &str| s.parse::<u64>().map_err(|_| bad("bad number"));
        let (from, to) = f[2].split_once("->").ok_or_else(|| bad("bad link"))?;
        Ok(EventRecord {
            tick: num(f[0])?,
            kind: f[1].parse()?,
            from: from.parse().map_err(|_| bad("bad sender"))?,
            to: to.parse().map_err(|_| bad("bad receiver"))?,
            seq: num(f[3])?,
            k_sender: num(f[4])?,
            k_receiver: num(f[5])?,
        })
    }
}

pub fn export_log(records: &[EventRecord]) -> String {
    let mut s = String::with_capacity(records.len() * 32);
    for r in records {
        s.push_str(&r.to_string());
        s.push('\n');
    }
    s
}

pub fn parse_log(text: &str) -> Result<Vec<EventRecord>, Error> {
    text.lines().filter(|l| !l.trim().is_empty()).map(str::parse).collect()
}

/// Whether a delivery order of sequence numbers `0..order.len()` is
/// admissible for reordering degree `m`: seq `s` never precedes any
/// seq `<= s - m - 1`.
pub fn is_admissible_order(order: &[u64], m: usize) -> bool {
    let mut delivered = vec![false; order.len()];
    for &s in order {
        let s = s as usize;
        if s >= delivered.len() || delivered[s] {
            return false;
        }
        if s > m && !delivered[..s - m].iter().all(|&d| d) {
            return false;
        }
        delivered[s] = true;
    }
    true
}

/// Checks every delivery in the log against the reordering degree `m` and,
/// when `cross_kind` is set, that no computation message overtook an
/// earlier marker/confirm on its link. Also checks per-link sequence
/// numbers are consecutive from 0 and updates increase `k`.
pub fn validate_log(records: &[EventRecord], m: usize, cross_kind: bool) -> Result<(), String> {
    #[derive(Default)]
    struct Link {
        sent: Vec<EnvelopeKind>,
        delivered: Vec<bool>,
    }
    let mut links: BTreeMap<(usize, usize, Channel), Link> = BTreeMap::new();
    let mut last_k: BTreeMap<usize, u64> = BTreeMap::new();
    for (line, r) in records.iter().enumerate() {
        match r.kind {
            LogKind::Update => {
                let prev = last_k.insert(r.from, r.seq);
                if prev.is_some_and(|p| r.seq <= p) {
                    return Err(format!("line {line}: iteration count of {} did not increase", r.from));
                }
            }
            LogKind::Send(kind) => {
                let link = links.entry((r.from, r.to, kind.channel())).or_default();
                if r.seq != link.sent.len() as u64 {
                    return Err(format!(
                        "line {line}: link {}->{} emitted seq {} but expected {}",
                        r.from,
                        r.to,
                        r.seq,
                        link.sent.len()
                    ));
                }
                link.sent.push(kind);
                link.delivered.push(false);
            }
            LogKind::Deliver(kind) => {
                let link = links
                    .get_mut(&(r.from, r.to, kind.channel()))
                    .ok_or_else(|| format!("line {line}: delivery on a link that never sent"))?;
                let s = r.seq as usize;
                if s >= link.sent.len() || link.delivered[s] {
                    return Err(format!("line {line}: seq {s} on {}->{} not pending", r.from, r.to));
                }
                if s > m {
                    if let Some(early) = link.delivered[..s - m].iter().position(|d| !d) {
                        return Err(format!(
                            "line {line}: seq {s} on {}->{} delivered before seq {early} (degree {m})",
                            r.from, r.to
                        ));
                    }
                }
                if cross_kind && kind == EnvelopeKind::Computation {
                    if let Some(c) = (0..s).find(|&c| link.sent[c].is_control() && !link.delivered[c]) {
                        return Err(format!(
                            "line {line}: computation seq {s} on {}->{} overtook control seq {c}",
                            r.from, r.to
                        ));
                    }
                }
                link.delivered[s] = true;
            }
        }
    }
    Ok(())
}
