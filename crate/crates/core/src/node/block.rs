use alloc::collections::BTreeSet;
use alloc::vec;
use alloc::vec::Vec;

use super::{BuilderPolicy, Carry, Ctx, Effects, EventKind, NodeState, TxStatus};
use crate::attest::KeyRing;
use crate::geom::average_pairwise_distance;
use crate::message::{Ack, Block, BlockProposal, Message, TxPair, VerifierEntry};
use crate::types::{Digest, Location, ProtocolParams, SimTime, UserId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, thiserror::Error)]
pub enum GateError {
    #[error("block holds {0} transactions, expected the block size")]
    Size(usize),
    #[error("verifier lists do not match the transactions")]
    Shape,
    #[error("transaction {0} has an invalid signature or acknowledgement")]
    Pair(usize),
    #[error("transaction {0} has too few verifiers")]
    Verifiers(usize),
    #[error("transaction {0} has a bad or duplicate verifier entry")]
    Entry(usize),
    #[error("verifiers of transaction {0} are not spread far enough")]
    Distance(usize),
    #[error("block id does not match its transactions")]
    Id,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, thiserror::Error)]
pub enum SyncError {
    #[error("peer {0} is not trusted")]
    Untrusted(UserId),
}

/// Blocks and deletions a trusted peer hands over.
#[derive(Clone, Debug, PartialEq)]
pub struct SyncRecord {
    pub from: UserId,
    pub since: SimTime,
    pub blocks: Vec<Block>,
    pub deleted: Vec<Digest>,
}

fn valid_pair(ring: &KeyRing, p: &TxPair) -> bool {
    let tx = &p.tx;
    ring.verify_for(tx.sender_attestation(), tx.sender, &tx.body().digest())
        && p.ack.tx == tx.id()
        && p.ack.receiver == tx.receiver
        && ring.verify_for(&p.ack.attestation, p.ack.receiver, &Ack::signing_payload(p.ack.tx, p.ack.receiver, p.ack.fee_recipient))
}

fn valid_entry(ring: &KeyRing, tx: &Digest, e: &VerifierEntry) -> bool {
    ring.verify_for(&e.attestation, e.user, &VerifierEntry::signing_payload(*tx, e.location))
}

fn distinct_users(entries: &[VerifierEntry]) -> bool {
    let mut seen = BTreeSet::new();
    entries.iter().all(|e| seen.insert(e.user))
}

fn spread(entries: &[&VerifierEntry]) -> f64 {
    let locs: Vec<Location> = entries.iter().map(|e| e.location).collect();
    average_pairwise_distance(&locs).unwrap_or(0.0)
}

/// Whether a verifier set passes the count and spread rules. A zero aVd
/// switches the spread rule off.
fn entry_gate(params: &ProtocolParams, entries: &[&VerifierEntry]) -> bool {
    entries.len() >= params.m_vu as usize && (params.avd == 0.0 || spread(entries) > params.avd)
}

/// Re-checks every creation rule on a block, independently of who made it.
pub fn check_block_gate(b: &Block, params: &ProtocolParams, ring: &KeyRing) -> Result<(), GateError> {
    if b.transactions.len() != params.block_size as usize {
        return Err(GateError::Size(b.transactions.len()));
    }
    if b.verifiers.len() != b.transactions.len() {
        return Err(GateError::Shape);
    }
    if b.id != Block::compute_id(&b.transactions) {
        return Err(GateError::Id);
    }
    for (i, (p, vs)) in b.transactions.iter().zip(&b.verifiers).enumerate() {
        if !valid_pair(ring, p) {
            return Err(GateError::Pair(i));
        }
        let d = p.tx.id();
        if !distinct_users(vs) || vs.iter().any(|e| e.flagged_false || !valid_entry(ring, &d, e)) {
            return Err(GateError::Entry(i));
        }
        if vs.len() < params.m_vu as usize {
            return Err(GateError::Verifiers(i));
        }
        let refs: Vec<&VerifierEntry> = vs.iter().collect();
        if !entry_gate(params, &refs) {
            return Err(GateError::Distance(i));
        }
    }
    Ok(())
}

fn canonical(entries: &mut [VerifierEntry]) {
    entries.sort_by_key(|e| (e.attestation.timestamp(), e.user));
}

impl NodeState {
    fn unflagged(p: &BlockProposal, i: usize) -> Vec<&VerifierEntry> {
        p.per_tx_verifiers[i].iter().filter(|e| !e.flagged_false).collect()
    }

    pub(crate) fn drop_proposal(&mut self, pid: &Digest) {
        self.dead_proposals.insert(*pid);
        if let Some(p) = self.proposals.remove(pid) {
            for pair in &p.transactions {
                let d = pair.tx.id();
                if self.claimed.get(&d) == Some(pid) {
                    self.claimed.remove(&d);
                }
            }
        }
        self.carry.remove(&Carry::Proposal(*pid));
    }

    /// Acknowledged, unverified, unclaimed pairs, oldest first.
    fn ready_pairs(&self) -> Vec<TxPair> {
        let mut ready: Vec<TxPair> = self
            .tx_db
            .iter()
            .filter(|(d, r)| r.status == TxStatus::Pending && !self.claimed.contains_key(*d))
            .filter_map(|(_, r)| r.ack.as_ref().map(|a| TxPair { tx: r.envelope.tx.clone(), ack: a.clone() }))
            .collect();
        ready.sort_by_key(|p| (p.tx.timestamp, p.tx.id()));
        ready
    }

    /// Starts a proposal over the oldest BS acknowledged pairs, if there are
    /// that many. The builder signs each entry itself.
    pub fn build_block(&mut self, ctx: Ctx<'_>, fx: &mut Effects) -> Option<BlockProposal> {
        let bs = self.params.block_size as usize;
        let mut pairs = self.ready_pairs();
        if pairs.len() < bs {
            return None;
        }
        pairs.truncate(bs);
        if self.config.builder_policy == BuilderPolicy::Participants
            && !pairs.iter().any(|p| {
                p.tx.sender == self.id || p.tx.receiver == self.id || p.ack.fee_recipient == self.id
            })
        {
            return None;
        }
        let here = self.reported_location();
        let per_tx_verifiers =
            pairs.iter().map(|p| vec![VerifierEntry::new(p.tx.id(), here, &self.signer, ctx.now)]).collect();
        let proposal = BlockProposal {
            distance_vector: vec![0.0; bs],
            disputed: vec![false; bs],
            transactions: pairs,
            per_tx_verifiers,
            builder: self.id,
            builder_location: here,
            created_at: ctx.now,
        };
        let pid = proposal.id();
        for p in &proposal.transactions {
            self.claimed.insert(p.tx.id(), pid);
        }
        fx.event(EventKind::ProposalBuilt, pid, bs as u64);
        self.proposals.insert(pid, proposal.clone());
        fx.outbox.push(Message::Proposal(proposal.clone()));
        self.carry(Carry::Proposal(pid), ctx.now);
        self.try_create(ctx, &pid, fx);
        Some(proposal)
    }

    pub(crate) fn maybe_build(&mut self, ctx: Ctx<'_>, fx: &mut Effects) {
        while self.build_block(ctx, fx).is_some() {}
    }

    /// Checks shape and signatures. Entries of users already recorded in
    /// `known`, a stored copy of the same proposal, were checked on arrival.
    fn valid_proposal(&self, ctx: Ctx<'_>, p: &BlockProposal, known: Option<&BlockProposal>) -> bool {
        let bs = self.params.block_size as usize;
        if p.transactions.len() != bs
            || p.per_tx_verifiers.len() != bs
            || p.distance_vector.len() != bs
            || p.disputed.len() != bs
            || !p.per_tx_verifiers.iter().all(|vs| distinct_users(vs))
        {
            return false;
        }
        if known.is_none() && !p.transactions.iter().all(|pair| valid_pair(ctx.ring, pair)) {
            return false;
        }
        p.transactions.iter().zip(&p.per_tx_verifiers).enumerate().all(|(i, (pair, vs))| {
            let d = pair.tx.id();
            vs.iter()
                .filter(|e| known.map_or(true, |k| !k.per_tx_verifiers[i].iter().any(|s| s.user == e.user)))
                .all(|e| valid_entry(ctx.ring, &d, e))
        })
    }

    pub fn on_proposal(&mut self, ctx: Ctx<'_>, incoming: BlockProposal, from: UserId, fx: &mut Effects) {
        if self.blocks_seen.contains(&Block::compute_id(&incoming.transactions)) {
            return;
        }
        let pid = incoming.id();
        if self.dead_proposals.contains(&pid) || !self.valid_proposal(ctx, &incoming, self.proposals.get(&pid)) {
            return;
        }
        let honest = !self.behavior.ignore_conflicts;
        let (mut p, mut changed) = match self.proposals.remove(&pid) {
            None => (incoming, true),
            Some(mut stored) => {
                let mut changed = false;
                for (i, vs) in incoming.per_tx_verifiers.into_iter().enumerate() {
                    for e in vs {
                        match stored.per_tx_verifiers[i].iter_mut().find(|s| s.user == e.user) {
                            Some(s) => {
                                if e.flagged_false && !s.flagged_false {
                                    s.flagged_false = true;
                                    changed = true;
                                }
                            }
                            None => {
                                stored.per_tx_verifiers[i].push(e);
                                changed = true;
                            }
                        }
                    }
                    if incoming.disputed[i] && !stored.disputed[i] {
                        stored.disputed[i] = true;
                        changed = true;
                    }
                }
                (stored, changed)
            }
        };
        if honest {
            let limit = self.params.r_cov + self.params.location_slack;
            for vs in p.per_tx_verifiers.iter_mut() {
                for e in vs.iter_mut() {
                    let fresh = e.attestation.timestamp() + self.config.fresh_window >= ctx.now;
                    if e.user == from && fresh && !e.flagged_false && e.location.distance(&self.location) > limit {
                        e.flagged_false = true;
                        changed = true;
                        fx.event(EventKind::EntryFlagged, pid, from.0);
                    }
                }
            }
        }
        let here = self.reported_location();
        let mut signed = 0u64;
        for i in 0..p.transactions.len() {
            let tx = p.transactions[i].tx.clone();
            let d = tx.id();
            if p.disputed[i] {
                continue;
            }
            let mut holds = self.tx_db.get(&d).is_some_and(|r| r.status == TxStatus::Pending);
            if honest {
                if self.rejected.contains(&d) {
                    p.disputed[i] = true;
                    changed = true;
                    continue;
                }
                if let Some(c) = self.find_conflict(&tx) {
                    let (other, verified) = self.lookup_tx(&c).map(|(t, v)| (t.clone(), v)).expect("indexed");
                    if verified || other.precedes(&tx) {
                        p.disputed[i] = true;
                        changed = true;
                        self.raise_alert(ctx, other, tx, fx);
                        continue;
                    }
                    self.evict(&c, fx);
                    self.raise_alert(ctx, tx.clone(), other, fx);
                    holds = true;
                }
            }
            if !(holds || self.behavior.attest_everything) {
                continue;
            }
            if p.per_tx_verifiers[i].iter().any(|e| e.user == self.id) {
                continue;
            }
            if entry_gate(&self.params, &Self::unflagged(&p, i)) {
                continue;
            }
            p.per_tx_verifiers[i].push(VerifierEntry::new(d, here, &self.signer, ctx.now));
            signed += 1;
            changed = true;
        }
        if signed > 0 {
            fx.event(EventKind::ProposalSigned, pid, signed);
        }
        for i in 0..p.transactions.len() {
            canonical(&mut p.per_tx_verifiers[i]);
            p.distance_vector[i] = spread(&Self::unflagged(&p, i));
            self.claimed.entry(p.transactions[i].tx.id()).or_insert(pid);
        }
        if p.disputed.iter().any(|x| *x) {
            // a disputed entry can never be created; release the rest
            if changed {
                fx.outbox.push(Message::Proposal(p.clone()));
            }
            self.proposals.insert(pid, p);
            self.drop_proposal(&pid);
            return;
        }
        if changed {
            fx.outbox.push(Message::Proposal(p.clone()));
            self.carry(Carry::Proposal(pid), ctx.now);
        }
        self.proposals.insert(pid, p);
        self.try_create(ctx, &pid, fx);
    }

    /// Creates the block once every entry has mVu unflagged verifiers spread
    /// wider than aVd.
    pub fn try_create(&mut self, ctx: Ctx<'_>, pid: &Digest, fx: &mut Effects) -> Option<Block> {
        let p = self.proposals.get(pid)?;
        if p.disputed.iter().any(|x| *x) {
            return None;
        }
        for i in 0..p.transactions.len() {
            if !entry_gate(&self.params, &Self::unflagged(p, i)) {
                return None;
            }
        }
        let verifiers = (0..p.transactions.len())
            .map(|i| Self::unflagged(p, i).into_iter().cloned().collect())
            .collect();
        let block = Block {
            id: Block::compute_id(&p.transactions),
            transactions: p.transactions.clone(),
            verifiers,
            parent_pointers: Vec::new(),
            child_pointer_count: 0,
            created_at: ctx.now,
        };
        if self.blocks_seen.contains(&block.id) {
            return None;
        }
        fx.event(EventKind::BlockCreated, block.id, block.transactions.len() as u64);
        self.on_block(ctx, block.clone(), fx).ok()?;
        Some(block)
    }

    /// Applies and forwards a block. Returns whether it was new.
    pub fn on_block(&mut self, ctx: Ctx<'_>, b: Block, fx: &mut Effects) -> Result<bool, GateError> {
        let applied = self.apply_block(ctx, b.clone(), fx)?;
        if applied {
            fx.outbox.push(Message::Block(b.clone()));
            self.carry(Carry::Block(b.id), ctx.now);
        }
        Ok(applied)
    }

    /// Marks the block's transactions verified, credits outputs and fees and
    /// collects garbage. Reapplying a known block changes nothing.
    pub fn apply_block(&mut self, ctx: Ctx<'_>, b: Block, fx: &mut Effects) -> Result<bool, GateError> {
        if self.blocks_seen.contains(&b.id) {
            let earlier = self.chain.block(&b.id).is_some_and(|held| {
                (b.created_at, b.verifier_digest()) < (held.created_at, held.verifier_digest())
            });
            if !earlier || check_block_gate(&b, &self.params, ctx.ring).is_err() {
                return Ok(false);
            }
            let Some(report) = self.chain.reconcile(&b, ctx.now) else { return Ok(false) };
            for del in &report.deleted_blocks {
                fx.event(EventKind::BlockDeleted, *del, 0);
            }
            return Ok(true);
        }
        if let Err(e) = check_block_gate(&b, &self.params, ctx.ring) {
            self.blocks_seen.insert(b.id);
            fx.event(EventKind::BlockRejected, b.id, 0);
            return Err(e);
        }
        if !self.behavior.ignore_conflicts {
            for (i, p) in b.transactions.iter().enumerate() {
                let inner = b.transactions[..i].iter().find(|q| q.tx.conflicts_with(&p.tx));
                let settled = self
                    .find_conflict(&p.tx)
                    .and_then(|c| self.lookup_tx(&c).filter(|(_, v)| *v).map(|(t, _)| t.clone()));
                if let Some(other) = inner.map(|q| q.tx.clone()).or(settled) {
                    self.blocks_seen.insert(b.id);
                    fx.event(EventKind::BlockRejected, b.id, 1);
                    self.raise_alert(ctx, other, p.tx.clone(), fx);
                    return Ok(false);
                }
            }
        }
        self.blocks_seen.insert(b.id);
        let txs: Vec<_> = b.transactions.iter().map(|p| p.tx.clone()).collect();
        let report = self.chain.insert(b.clone(), ctx.now).unwrap_or_default();
        fx.event(EventKind::BlockApplied, b.id, b.transactions.len() as u64);
        fx.event(EventKind::PointersRemoved, b.id, report.pointers_removed);
        for del in &report.deleted_blocks {
            fx.event(EventKind::BlockDeleted, *del, 0);
        }
        let mut losers = Vec::new();
        for tx in &txs {
            let d = tx.id();
            if let Some(c) = self.find_conflict(tx) {
                if self.tx_db.get(&c).is_some_and(|r| r.status == TxStatus::Pending) {
                    losers.push(c);
                }
            }
            for i in &tx.inputs {
                self.by_input.insert((tx.sender, *i), d);
                if tx.sender == self.id {
                    self.reserved.remove(i);
                }
            }
            if let Some(r) = self.tx_db.get_mut(&d) {
                r.status = TxStatus::Verified;
            }
            self.pending_list.remove(&d);
            self.own_pending.remove(&d);
            self.carry.remove(&Carry::Tx(d));
            self.carry.remove(&Carry::Ack(d));
            if let Some(pid) = self.claimed.get(&d).copied() {
                self.drop_proposal(&pid);
            }
        }
        for c in losers {
            self.evict(&c, fx);
        }
        // transactions of deleted blocks are no longer useful
        let gone: Vec<Digest> = self.tx_db.keys().filter(|d| self.is_deleted(d)).copied().collect();
        for d in gone {
            self.tx_db.remove(&d);
        }
        self.last_update = self.last_update.max(ctx.now);
        self.maybe_build(ctx, fx);
        Ok(true)
    }

    fn is_deleted(&self, d: &Digest) -> bool {
        self.tx_db.get(d).is_some_and(|r| r.status == TxStatus::Verified) && self.chain.block_of(d).is_none()
    }

    /// What this node sends a trusted peer asking for updates since `since`.
    pub fn sync_record(&self, since: SimTime) -> SyncRecord {
        SyncRecord {
            from: self.id,
            since,
            blocks: self.chain.blocks_since(since).cloned().collect(),
            deleted: self.chain.deletions_since(since).collect(),
        }
    }

    /// Applies a peer's sync record. Blocks failing the gate are skipped.
    pub fn apply_sync(&mut self, ctx: Ctx<'_>, rec: &SyncRecord, fx: &mut Effects) -> Result<usize, SyncError> {
        if !self.trusted_network.contains(&rec.from) {
            return Err(SyncError::Untrusted(rec.from));
        }
        let mut applied = 0;
        for b in &rec.blocks {
            if let Ok(true) = self.apply_block(ctx, b.clone(), fx) {
                applied += 1;
            }
        }
        for d in &rec.deleted {
            if self.tx_db.get(d).is_some_and(|r| r.status == TxStatus::Verified) {
                self.tx_db.remove(d);
            }
        }
        fx.event(EventKind::Synced, Digest::ZERO, applied as u64);
        self.last_update = self.last_update.max(ctx.now);
        Ok(applied)
    }
}

/// `node` pulls from `peer` everything verified since `since`.
pub fn sync(
    node: &mut NodeState,
    peer: &NodeState,
    since: SimTime,
    ctx: Ctx<'_>,
    fx: &mut Effects,
) -> Result<SyncRecord, SyncError> {
    if !node.trusted_network.contains(&peer.id) {
        return Err(SyncError::Untrusted(peer.id));
    }
    let rec = peer.sync_record(since);
    node.apply_sync(ctx, &rec, fx)?;
    Ok(rec)
}
