//! Contact traces: pairwise meeting windows in the Infocom/Haggle style.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// An undirected contact between `a` and `b` over `[start, end)` seconds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContactRecord {
    pub a: u64,
    pub b: u64,
    pub start: f64,
    pub end: f64,
}

impl ContactRecord {
    fn key(&self) -> (u64, u64) {
        (self.a.min(self.b), self.a.max(self.b))
    }

    pub fn active_at(&self, t: f64) -> bool {
        self.start <= t && t < self.end
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("cannot read trace: {0}")]
    Io(#[from] std::io::Error),
    #[error("trace line {line}: {message}")]
    Line { line: u64, message: String },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trace {
    /// Sorted by start time, then endpoints.
    pub records: Vec<ContactRecord>,
    /// One past the largest user id seen.
    pub users: usize,
    /// Overlapping duplicates merged while loading.
    pub merged: usize,
}

impl Trace {
    /// Validates, merges overlapping windows of the same pair and sorts.
    pub fn from_records(records: Vec<ContactRecord>) -> Trace {
        let mut by_pair: BTreeMap<(u64, u64), Vec<ContactRecord>> = BTreeMap::new();
        for r in records {
            let (a, b) = r.key();
            by_pair.entry((a, b)).or_default().push(ContactRecord { a, b, ..r });
        }
        let mut out = Vec::new();
        let mut merged = 0;
        for (_, mut list) in by_pair {
            list.sort_by(|x, y| x.start.total_cmp(&y.start));
            let mut cur = list[0];
            for r in list.into_iter().skip(1) {
                if r.start <= cur.end {
                    cur.end = cur.end.max(r.end);
                    merged += 1;
                } else {
                    out.push(cur);
                    cur = r;
                }
            }
            out.push(cur);
        }
        out.sort_by(|x, y| x.start.total_cmp(&y.start).then(x.key().cmp(&y.key())));
        let users = out.iter().map(|r| r.b + 1).max().unwrap_or(0) as usize;
        Trace { records: out, users, merged }
    }

    /// Last contact end, in seconds.
    pub fn span(&self) -> f64 {
        self.records.iter().map(|r| r.end).fold(0.0, f64::max)
    }
}

/// Reads a `a,b,start,end` CSV (header required). A line with `start >= end`
/// or a self-contact is an error naming the line.
pub fn ingest_contact_trace<R: Read>(input: R) -> Result<Trace, TraceError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let mut records = Vec::new();
    for row in rdr.deserialize::<ContactRecord>() {
        let r = row.map_err(|e| TraceError::Line {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = records.len() as u64 + 2;
        if !(r.start < r.end) || !r.start.is_finite() || !r.end.is_finite() {
            return Err(TraceError::Line { line, message: "start must be before end".into() });
        }
        if r.a == r.b {
            return Err(TraceError::Line { line, message: "contact of a user with itself".into() });
        }
        records.push(r);
    }
    Ok(Trace::from_records(records))
}

pub fn load_trace(path: &Path) -> Result<Trace, TraceError> {
    ingest_contact_trace(std::fs::File::open(path)?)
}

pub fn write_trace<W: std::io::Write>(trace: &Trace, out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for r in &trace.records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Parameters of a synthetic conference-style trace.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTrace {
    pub users: usize,
    pub duration: f64,
    /// Meetings per pair per hour.
    pub pair_rate: f64,
    /// Mean contact length in seconds.
    pub mean_contact: f64,
}

impl Default for SyntheticTrace {
    fn default() -> Self {
        SyntheticTrace { users: 80, duration: 86_400.0, pair_rate: 0.05, mean_contact: 300.0 }
    }
}

/// Every pair meets as a Poisson process; contact lengths are exponential.
pub fn synthetic_trace(spec: &SyntheticTrace, seed: u64) -> Trace {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rate = spec.pair_rate / 3600.0;
    let mut records = Vec::new();
    for a in 0..spec.users as u64 {
        for b in a + 1..spec.users as u64 {
            let mut t = 0.0;
            loop {
                t += exponential(&mut rng, rate);
                if t >= spec.duration {
                    break;
                }
                let len = exponential(&mut rng, 1.0 / spec.mean_contact).max(1.0);
                records.push(ContactRecord { a, b, start: t.floor(), end: (t + len).ceil().min(spec.duration) });
                t += len;
            }
        }
    }
    records.retain(|r| r.start < r.end);
    Trace::from_records(records)
}

fn exponential(rng: &mut impl Rng, rate: f64) -> f64 {
    if rate <= 0.0 {
        return f64::INFINITY;
    }
    let u: f64 = rng.gen();
    -(1.0 - u).ln() / rate
}

/// Contacts active at a given time, answered for non-decreasing times.
#[derive(Clone, Debug)]
pub struct ContactSchedule {
    records: Vec<ContactRecord>,
    next: usize,
    active: Vec<ContactRecord>,
}

impl ContactSchedule {
    pub fn new(trace: &Trace) -> Self {
        ContactSchedule { records: trace.records.clone(), next: 0, active: Vec::new() }
    }

    /// Adjacency lists for `n` users at time `t`.
    pub fn neighbors_at(&mut self, t: f64, n: usize) -> Vec<Vec<u32>> {
        while self.next < self.records.len() && self.records[self.next].start <= t {
            self.active.push(self.records[self.next]);
            self.next += 1;
        }
        self.active.retain(|r| r.end > t);
        let mut adj = vec![Vec::new(); n];
        for r in &self.active {
            if (r.a as usize) < n && (r.b as usize) < n {
                adj[r.a as usize].push(r.b as u32);
                adj[r.b as usize].push(r.a as u32);
            }
        }
        for l in &mut adj {
            l.sort_unstable();
            l.dedup();
        }
        adj
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn load(s: &str) -> Result<Trace, TraceError> {
        ingest_contact_trace(s.as_bytes())
    }

    #[test]
    fn single_contact() {
        let t = load("a,b,start,end\n0,1,10,20\n").unwrap();
        assert_eq!(t.records, vec![ContactRecord { a: 0, b: 1, start: 10.0, end: 20.0 }]);
        assert_eq!(t.users, 2);
    }

    #[test]
    fn unsorted_input_is_sorted() {
        let t = load("a,b,start,end\n3,2,50,60\n0,1,10,20\n1,2,30,40\n").unwrap();
        let starts: Vec<f64> = t.records.iter().map(|r| r.start).collect();
        assert_eq!(starts, vec![10.0, 30.0, 50.0]);
        assert_eq!((t.records[2].a, t.records[2].b), (2, 3));
        assert_eq!(t.users, 4);
    }

    #[test]
    fn overlapping_duplicates_merge() {
        let t = load("a,b,start,end\n0,1,10,20\n1,0,15,30\n0,1,40,50\n").unwrap();
        assert_eq!(t.merged, 1);
        assert_eq!(t.records.len(), 2);
        assert_eq!((t.records[0].start, t.records[0].end), (10.0, 30.0));
    }

    #[test]
    fn bad_window_names_line() {
        match load("a,b,start,end\n0,1,10,20\n0,2,20,20\n") {
            Err(TraceError::Line { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        match load("a,b,start,end\n0,1,x,20\n") {
            Err(TraceError::Line { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn schedule_tracks_windows() {
        let t = load("a,b,start,end\n0,1,10,20\n").unwrap();
        let mut s = ContactSchedule::new(&t);
        assert!(s.neighbors_at(5.0, 2)[0].is_empty());
        assert_eq!(s.neighbors_at(10.0, 2)[0], vec![1]);
        assert_eq!(s.neighbors_at(19.0, 2)[1], vec![0]);
        assert!(s.neighbors_at(20.0, 2)[0].is_empty());
    }

    #[test]
    fn synthetic_is_seeded() {
        let spec = SyntheticTrace { users: 10, duration: 3600.0, pair_rate: 1.0, mean_contact: 60.0 };
        let a = synthetic_trace(&spec, 1);
        assert_eq!(a, synthetic_trace(&spec, 1));
        assert_ne!(a, synthetic_trace(&spec, 2));
        assert!(a.records.iter().all(|r| r.start < r.end && r.end <= 3600.0 && r.a < r.b));
        // 45 pairs, one meeting per hour each on average
        assert!((20..90).contains(&a.records.len()), "{}", a.records.len());
    }
}
