//! End-of-run checks over every node's chain, and a JSON-lines chain dump.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use localcoin_core::node::check_block_gate;
use localcoin_core::{Block, Digest, UserId};
use serde::Serialize;

use crate::sim::World;

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct AuditReport {
    /// Non-genesis blocks re-checked across honest nodes.
    pub blocks_checked: usize,
    /// `(node, block)` pairs failing the verification gate.
    pub gate_failures: Vec<(u64, String)>,
    /// Pairs of distinct verified transactions spending the same output of
    /// the same sender, seen anywhere on honest nodes.
    pub conflicts: Vec<(String, String)>,
}

impl AuditReport {
    pub fn is_clean(&self) -> bool {
        self.gate_failures.is_empty() && self.conflicts.is_empty()
    }
}

/// Re-checks every block an honest node holds and looks for double spends
/// among verified transactions.
pub fn audit(world: &World) -> AuditReport {
    let mut rep = AuditReport::default();
    let mut spends: BTreeMap<(UserId, Digest), BTreeSet<Digest>> = BTreeMap::new();
    for node in world.nodes.iter().filter(|n| n.behavior.is_honest()) {
        for b in node.chain().blocks() {
            if b.id == world.genesis.id {
                continue;
            }
            rep.blocks_checked += 1;
            if check_block_gate(b, &node.params, world.ring()).is_err() {
                rep.gate_failures.push((node.id.0, hex::encode(b.id.0)));
            }
            for p in &b.transactions {
                for input in &p.tx.inputs {
                    spends.entry((p.tx.sender, *input)).or_default().insert(p.tx.id());
                }
            }
        }
    }
    for txs in spends.values() {
        let v: Vec<&Digest> = txs.iter().collect();
        for i in 0..v.len() {
            for j in i + 1..v.len() {
                rep.conflicts.push((hex::encode(v[i].0), hex::encode(v[j].0)));
            }
        }
    }
    rep
}

#[derive(Serialize)]
struct TxLine {
    id: String,
    sender: u64,
    receiver: u64,
    inputs: Vec<String>,
    amount: u64,
    change: u64,
    tx_fee: u64,
    block_fee: u64,
    fee_recipient: u64,
    verifiers: Vec<(u64, f64, f64, bool)>,
}

#[derive(Serialize)]
struct BlockLine {
    node: u64,
    block: String,
    created_at_ms: u64,
    child_pointers: u32,
    transactions: Vec<TxLine>,
}

fn block_line(node: u64, b: &Block) -> BlockLine {
    BlockLine {
        node,
        block: hex::encode(b.id.0),
        created_at_ms: b.created_at.millis(),
        child_pointers: b.child_pointer_count,
        transactions: b
            .transactions
            .iter()
            .enumerate()
            .map(|(i, p)| TxLine {
                id: hex::encode(p.tx.id().0),
                sender: p.tx.sender.0,
                receiver: p.tx.receiver.0,
                inputs: p.tx.inputs.iter().map(|d| hex::encode(d.0)).collect(),
                amount: p.tx.amount_to_receiver.millis(),
                change: p.tx.change.millis(),
                tx_fee: p.tx.tx_fee.millis(),
                block_fee: p.tx.block_fee.millis(),
                fee_recipient: p.ack.fee_recipient.0,
                verifiers: b
                    .verifiers
                    .get(i)
                    .map(|vs| vs.iter().map(|v| (v.user.0, v.location.x, v.location.y, v.flagged_false)).collect())
                    .unwrap_or_default(),
            })
            .collect(),
    }
}

/// One JSON object per (node, block).
pub fn dump_chains<W: Write>(world: &World, mut out: W) -> std::io::Result<()> {
    for node in &world.nodes {
        for b in node.chain().blocks() {
            serde_json::to_writer(&mut out, &block_line(node.id.0, b))?;
            out.write_all(b"\n")?;
        }
    }
    Ok(())
}
