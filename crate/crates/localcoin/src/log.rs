//! The per-run event log: one CSV line per protocol or simulator event.
//!
//! Columns are `tick,node,event,digest,aux`. `node` is empty for events that
//! belong to the whole run; `digest` is lowercase hex.

use std::io::{Read, Write};

use localcoin_core::node::{EventKind, NodeEvent};
use localcoin_core::Digest;
use serde::{Deserialize, Serialize};

pub const HEADER: &str = "tick,node,event,digest,aux";

/// Simulator-level events, logged next to the protocol ones.
pub mod sim_event {
    /// First line; aux = number of users.
    pub const SCENARIO: &str = "scenario";
    /// aux = tick length in milliseconds.
    pub const TICK_MS: &str = "tick_ms";
    pub const COLLUDER: &str = "colluder";
    pub const ATTACKER: &str = "attacker";
    /// A fake payment by the attacker; aux = fake index.
    pub const FAKE_CREATED: &str = "fake_created";
    /// aux = receiver of the fake.
    pub const FAKE_RECEIVER: &str = "fake_receiver";
    /// A transaction placed in a newly created block; aux = block digest prefix.
    pub const BLOCK_TX: &str = "block_tx";
    /// A scheduled payment the sender could not fund; aux = amount.
    pub const TX_REFUSED: &str = "tx_refused";
    /// aux = total broadcasts over the run.
    pub const MESSAGES: &str = "messages";
    /// Last line; aux = final tick.
    pub const END: &str = "end";
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogLine {
    pub tick: u64,
    pub node: Option<u64>,
    pub event: String,
    #[serde(with = "hex_digest")]
    pub digest: Digest,
    pub aux: u64,
}

impl LogLine {
    pub fn kind(&self) -> Option<EventKind> {
        EventKind::from_name(&self.event)
    }
}

mod hex_digest {
    use localcoin_core::Digest;
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Digest, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(d.0))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Digest, D::Error> {
        let s = String::deserialize(d)?;
        let mut out = [0u8; 32];
        hex::decode_to_slice(&s, &mut out).map_err(D::Error::custom)?;
        Ok(Digest(out))
    }
}

/// In-memory log of one run.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EventLog {
    pub lines: Vec<LogLine>,
}

#[derive(Debug, thiserror::Error)]
pub enum LogError {
    #[error("event log line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("event log is truncated (no end marker)")]
    Truncated,
    #[error("event log does not start with a scenario line")]
    MissingHeader,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl EventLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn sim(&mut self, tick: u64, node: Option<u64>, event: &str, digest: Digest, aux: u64) {
        self.lines.push(LogLine { tick, node, event: event.to_string(), digest, aux });
    }

    pub fn node_event(&mut self, tick: u64, node: u64, e: &NodeEvent) {
        self.lines.push(LogLine { tick, node: Some(node), event: e.kind.name().to_string(), digest: e.digest, aux: e.aux });
    }

    pub fn is_complete(&self) -> bool {
        self.lines.last().is_some_and(|l| l.event == sim_event::END)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        for l in &self.lines {
            w.serialize(l)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        buf
    }

    pub fn read_csv<R: Read>(input: R) -> Result<EventLog, LogError> {
        let mut rdr = csv::Reader::from_reader(input);
        let mut lines = Vec::new();
        for row in rdr.deserialize::<LogLine>() {
            lines.push(row.map_err(|e| LogError::Parse {
                line: e.position().map_or(0, |p| p.line()),
                message: e.to_string(),
            })?);
        }
        Ok(EventLog { lines })
    }

    /// Hex SHA-256 of the CSV rendering.
    pub fn fingerprint(&self) -> String {
        hex::encode(Digest::of(&self.to_csv_bytes()).0)
    }
}
