//! Summary statistics computed from an event log.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use localcoin_core::node::EventKind;
use localcoin_core::Digest;
use serde::{Deserialize, Serialize};

use crate::log::{sim_event, EventLog, LogError};

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error(transparent)]
    Log(#[from] LogError),
    #[error("no transaction {0} in the log")]
    UnknownDigest(String),
}

/// Per-run summary. Ratios over an empty population are `None`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub users: u64,
    pub duration_s: f64,
    /// Honest payments issued (fakes excluded).
    pub transactions: u64,
    /// Scheduled payments the sender could not fund.
    pub refused: u64,
    /// Fraction of payments acknowledged by their receiver.
    pub transaction_rate: Option<f64>,
    /// Mean fraction of users that stored each payment.
    pub transaction_spread: Option<f64>,
    /// Fraction of payments that made it into a created block.
    pub verified_rate: Option<f64>,
    /// Seconds from creation to acknowledgement, one per acknowledged payment.
    pub delivery_times: Vec<f64>,
    pub fakes: u64,
    /// Mean fraction of all users that stored each fake.
    pub fake_spread_all: Option<f64>,
    /// Same, counting honest users only.
    pub fake_spread_honest: Option<f64>,
    /// Fakes acknowledged by their receiver.
    pub fakes_accepted: u64,
    /// 1 when at least two fakes were accepted, else 0; averaged over seeds
    /// this estimates the acceptance probability. Absent when the run had
    /// no attacker.
    pub fake_acceptance_prob: Option<f64>,
    /// Two distinct fakes both ended up in created blocks.
    pub double_spend_success: bool,
    pub blocks_created: u64,
    pub messages_sent: u64,
}

impl MetricsReport {
    pub fn mean_delivery_time(&self) -> Option<f64> {
        mean(&self.delivery_times)
    }
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

fn ratio(a: usize, b: usize) -> Option<f64> {
    (b > 0).then(|| a as f64 / b as f64)
}

#[derive(Default)]
struct Digested {
    users: u64,
    tick_ms: u64,
    end_tick: u64,
    messages: u64,
    adversaries: BTreeSet<u64>,
    attacked: bool,
    fakes: BTreeMap<Digest, (u64, Option<u64>)>,
    created: BTreeMap<Digest, u64>,
    creation_order: Vec<Digest>,
    stored: BTreeMap<Digest, BTreeSet<u64>>,
    acked: BTreeMap<Digest, (u64, u64)>,
    in_blocks: BTreeSet<Digest>,
    blocks: BTreeSet<Digest>,
    refused: u64,
}

fn digest_log(log: &EventLog) -> Result<Digested, LogError> {
    let first = log.lines.first().ok_or(LogError::MissingHeader)?;
    if first.event != sim_event::SCENARIO {
        return Err(LogError::MissingHeader);
    }
    if !log.is_complete() {
        return Err(LogError::Truncated);
    }
    let mut d = Digested { users: first.aux, tick_ms: 1000, ..Default::default() };
    for l in &log.lines {
        match l.event.as_str() {
            sim_event::TICK_MS => d.tick_ms = l.aux.max(1),
            sim_event::ATTACKER | sim_event::COLLUDER => {
                d.attacked |= l.event == sim_event::ATTACKER;
                d.adversaries.extend(l.node);
            }
            sim_event::FAKE_CREATED => {
                d.fakes.entry(l.digest).or_insert((l.tick, None));
            }
            sim_event::FAKE_RECEIVER => {
                if let Some(f) = d.fakes.get_mut(&l.digest) {
                    f.1 = Some(l.aux);
                }
            }
            sim_event::BLOCK_TX => {
                d.in_blocks.insert(l.digest);
            }
            sim_event::TX_REFUSED => d.refused += 1,
            sim_event::MESSAGES => d.messages = l.aux,
            sim_event::END => d.end_tick = l.tick,
            _ => match l.kind() {
                Some(EventKind::TxCreated) => {
                    if !d.created.contains_key(&l.digest) {
                        d.created.insert(l.digest, l.tick);
                        d.creation_order.push(l.digest);
                    }
                }
                Some(EventKind::TxStored) => {
                    d.stored.entry(l.digest).or_default().extend(l.node);
                }
                Some(EventKind::TxAcked) => {
                    if let Some(node) = l.node {
                        d.acked.entry(l.digest).or_insert((l.tick, node));
                    }
                }
                Some(EventKind::BlockCreated) => {
                    d.blocks.insert(l.digest);
                }
                _ => {}
            },
        }
    }
    Ok(d)
}

pub fn compute_report(log: &EventLog) -> Result<MetricsReport, LogError> {
    let d = digest_log(log)?;
    let secs = |ticks: u64| ticks as f64 * d.tick_ms as f64 / 1000.0;
    let n = d.users.max(1) as f64;
    let honest_n = d.users.saturating_sub(d.adversaries.len() as u64);

    let normal: Vec<(&Digest, &u64)> = d
        .creation_order
        .iter()
        .filter(|k| !d.fakes.contains_key(*k))
        .map(|k| (k, &d.created[k]))
        .collect();
    let acked = normal.iter().filter(|(k, _)| d.acked.contains_key(*k)).count();
    let spreads: Vec<f64> =
        normal.iter().map(|(k, _)| d.stored.get(*k).map_or(0, |s| s.len()) as f64 / n).collect();
    let in_blocks = normal.iter().filter(|(k, _)| d.in_blocks.contains(*k)).count();
    let mut delivery_times = Vec::new();
    for (k, t0) in &normal {
        if let Some((t1, _)) = d.acked.get(*k) {
            delivery_times.push(secs(t1 - **t0));
        }
    }

    let mut spread_all = Vec::new();
    let mut spread_honest = Vec::new();
    let mut fakes_accepted = 0;
    for (k, (_, receiver)) in &d.fakes {
        let holders = d.stored.get(k);
        spread_all.push(holders.map_or(0, |s| s.len()) as f64 / n);
        if honest_n > 0 {
            let h = holders.map_or(0, |s| s.iter().filter(|u| !d.adversaries.contains(u)).count());
            spread_honest.push(h as f64 / honest_n as f64);
        }
        if let (Some(r), Some((_, by))) = (receiver, d.acked.get(k)) {
            if r == by {
                fakes_accepted += 1;
            }
        }
    }
    let fakes_in_blocks = d.fakes.keys().filter(|k| d.in_blocks.contains(*k)).count();

    Ok(MetricsReport {
        users: d.users,
        duration_s: secs(d.end_tick),
        transactions: normal.len() as u64,
        refused: d.refused,
        transaction_rate: ratio(acked, normal.len()),
        transaction_spread: mean(&spreads),
        verified_rate: ratio(in_blocks, normal.len()),
        delivery_times,
        fakes: d.fakes.len() as u64,
        fake_spread_all: mean(&spread_all),
        fake_spread_honest: mean(&spread_honest),
        fakes_accepted,
        fake_acceptance_prob: (d.attacked || !d.fakes.is_empty()).then_some(if fakes_accepted >= 2 { 1.0 } else { 0.0 }),
        double_spend_success: fakes_in_blocks >= 2,
        blocks_created: d.blocks.len() as u64,
        messages_sent: d.messages,
    })
}

/// Fraction of users holding `tx` over time, as `(seconds, fraction)` points
/// starting at its creation. A point is added whenever the fraction grows.
pub fn spread_over_time(log: &EventLog, tx: &Digest) -> Result<Vec<(f64, f64)>, MetricsError> {
    let d = digest_log(log)?;
    let Some(&t0) = d.created.get(tx) else {
        return Err(MetricsError::UnknownDigest(hex::encode(tx.0)));
    };
    let n = d.users.max(1) as f64;
    let secs = |ticks: u64| ticks as f64 * d.tick_ms as f64 / 1000.0;
    let mut seen = BTreeSet::new();
    let mut out = vec![(secs(t0), 0.0)];
    for l in &log.lines {
        if l.digest == *tx && l.kind() == Some(EventKind::TxStored) {
            if let Some(u) = l.node {
                if seen.insert(u) {
                    let p = (secs(l.tick), seen.len() as f64 / n);
                    match out.last_mut() {
                        Some(last) if last.0 == p.0 => *last = p,
                        _ => out.push(p),
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Seconds after the first point until the fraction reaches `f`.
pub fn time_to_fraction(series: &[(f64, f64)], f: f64) -> Option<f64> {
    let t0 = series.first()?.0;
    series.iter().find(|(_, x)| *x >= f).map(|(t, _)| t - t0)
}

/// Transactions issued as fakes, in creation order.
pub fn fake_digests(log: &EventLog) -> Vec<Digest> {
    log.lines.iter().filter(|l| l.event == sim_event::FAKE_CREATED).map(|l| l.digest).collect()
}

/// Outcome of one fake payment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FakeOutcome {
    pub index: u64,
    pub digest: String,
    pub receiver: Option<u64>,
    pub spread_all: f64,
    pub spread_honest: f64,
    pub accepted: bool,
    pub in_block: bool,
}

pub fn fake_outcomes(log: &EventLog) -> Result<Vec<FakeOutcome>, LogError> {
    let d = digest_log(log)?;
    let n = d.users.max(1) as f64;
    let honest_n = d.users.saturating_sub(d.adversaries.len() as u64).max(1) as f64;
    let mut out: Vec<FakeOutcome> = log
        .lines
        .iter()
        .filter(|l| l.event == sim_event::FAKE_CREATED)
        .map(|l| {
            let receiver = d.fakes.get(&l.digest).and_then(|f| f.1);
            let holders = d.stored.get(&l.digest);
            let honest = holders.map_or(0, |s| s.iter().filter(|u| !d.adversaries.contains(u)).count());
            FakeOutcome {
                index: l.aux,
                digest: hex::encode(l.digest.0),
                receiver,
                spread_all: holders.map_or(0, |s| s.len()) as f64 / n,
                spread_honest: honest as f64 / honest_n,
                accepted: receiver.is_some() && d.acked.get(&l.digest).map(|a| a.1) == receiver,
                in_block: d.in_blocks.contains(&l.digest),
            }
        })
        .collect();
    out.sort_by_key(|f| f.index);
    Ok(out)
}

pub fn write_fakes<W: Write>(fakes: &[FakeOutcome], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for f in fakes {
        w.serialize(f)?;
    }
    w.flush()?;
    Ok(())
}

fn cell(x: Option<f64>) -> String {
    x.map_or(String::new(), |v| format!("{v:.6}"))
}

pub const REPORT_HEADER: &str = "users,duration_s,transactions,refused,transaction_rate,transaction_spread,\
verified_rate,mean_delivery_s,fakes,fake_spread_all,fake_spread_honest,fakes_accepted,fake_acceptance_prob,\
double_spend_success,blocks_created,messages_sent";

/// One CSV row matching [`REPORT_HEADER`].
pub fn report_row(r: &MetricsReport) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        r.users,
        r.duration_s,
        r.transactions,
        r.refused,
        cell(r.transaction_rate),
        cell(r.transaction_spread),
        cell(r.verified_rate),
        cell(r.mean_delivery_time()),
        r.fakes,
        cell(r.fake_spread_all),
        cell(r.fake_spread_honest),
        r.fakes_accepted,
        cell(r.fake_acceptance_prob),
        r.double_spend_success,
        r.blocks_created,
        r.messages_sent
    )
}

pub fn write_report<W: Write>(r: &MetricsReport, mut out: W) -> std::io::Result<()> {
    writeln!(out, "{REPORT_HEADER}")?;
    writeln!(out, "{}", report_row(r))
}

pub fn write_series<W: Write>(series: &[(f64, f64)], mut out: W) -> std::io::Result<()> {
    writeln!(out, "time_s,fraction")?;
    for (t, f) in series {
        writeln!(out, "{t},{f:.6}")?;
    }
    Ok(())
}
