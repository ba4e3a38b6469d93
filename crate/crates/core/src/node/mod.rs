//! One user's protocol state machine.
//!
//! Handlers never touch the network directly: they append outbound messages
//! and log events to an [`Effects`] buffer that the driver drains. Every
//! outbound message is a local broadcast.

mod block;
mod tx;

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec;
use alloc::vec::Vec;

pub use block::{check_block_gate, sync, GateError, SyncError, SyncRecord};
pub use tx::SendError;

use crate::attest::{KeyRing, Signer};
use crate::chain::ChainView;
use crate::message::{Ack, Block, BlockProposal, Message, Transaction, TransactionBody, TxEnvelope, TxPair};
use crate::types::{Coins, Digest, Location, ProtocolParams, SimTime, UserId};

/// Which nodes start block proposals.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum BuilderPolicy {
    /// Any node holding enough acknowledged pairs.
    Any,
    /// Only nodes that sent, received or forwarded one of the chosen pairs.
    #[default]
    Participants,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NodeConfig {
    /// Relays keep re-sending held messages to new contacts, not only the sender.
    pub carry_forward: bool,
    /// How long a relay keeps re-sending a held message.
    pub carry_ttl: SimTime,
    pub builder_policy: BuilderPolicy,
    /// An unfinished proposal releases its transactions after this long.
    pub proposal_timeout: SimTime,
    /// A forwarder's verifier entry is location-checked only if it was signed
    /// within this window, so older entries carried along are not misjudged.
    pub fresh_window: SimTime,
}

impl Default for NodeConfig {
    fn default() -> Self {
        NodeConfig {
            carry_forward: true,
            carry_ttl: SimTime::from_secs(600),
            builder_policy: BuilderPolicy::Participants,
            proposal_timeout: SimTime::from_secs(120),
            fresh_window: SimTime::from_secs(1),
        }
    }
}

/// Deviations from the honest protocol available to colluders and attackers.
/// Nothing here can mint another user's attestation.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Behavior {
    /// Store, forward and verify conflicting transactions without complaint.
    pub ignore_conflicts: bool,
    /// Never raise or forward double-spend alerts.
    pub suppress_alerts: bool,
    /// Co-attest and verify every transaction seen.
    pub attest_everything: bool,
    /// Location reported in verifier entries instead of the true one.
    pub claimed_location: Option<Location>,
}

impl Behavior {
    pub fn honest() -> Self {
        Behavior::default()
    }

    pub fn colluder() -> Self {
        Behavior { ignore_conflicts: true, suppress_alerts: true, attest_everything: true, claimed_location: None }
    }

    pub fn is_honest(&self) -> bool {
        *self == Behavior::default()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TxStatus {
    Pending,
    Verified,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TxRecord {
    pub envelope: TxEnvelope,
    pub status: TxStatus,
    pub first_seen: SimTime,
    pub ack: Option<Ack>,
}

/// Receiver-side bookkeeping for an incoming payment.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PendingRecord {
    pub first_notifier: UserId,
    pub trusted_signers: BTreeSet<UserId>,
    pub acked: bool,
}

impl PendingRecord {
    pub fn trusted_count(&self) -> u32 {
        self.trusted_signers.len() as u32
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EventKind {
    TxCreated,
    TxStored,
    TxAttested,
    TxAcked,
    AckStored,
    TxRejected,
    TxEvicted,
    AlertRaised,
    ProposalBuilt,
    ProposalSigned,
    EntryFlagged,
    BlockCreated,
    BlockApplied,
    BlockRejected,
    PointersRemoved,
    BlockDeleted,
    Synced,
}

impl EventKind {
    pub const ALL: [EventKind; 17] = [
        EventKind::TxCreated,
        EventKind::TxStored,
        EventKind::TxAttested,
        EventKind::TxAcked,
        EventKind::AckStored,
        EventKind::TxRejected,
        EventKind::TxEvicted,
        EventKind::AlertRaised,
        EventKind::ProposalBuilt,
        EventKind::ProposalSigned,
        EventKind::EntryFlagged,
        EventKind::BlockCreated,
        EventKind::BlockApplied,
        EventKind::BlockRejected,
        EventKind::PointersRemoved,
        EventKind::BlockDeleted,
        EventKind::Synced,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EventKind::TxCreated => "tx_created",
            EventKind::TxStored => "tx_stored",
            EventKind::TxAttested => "tx_attested",
            EventKind::TxAcked => "tx_acked",
            EventKind::AckStored => "ack_stored",
            EventKind::TxRejected => "tx_rejected",
            EventKind::TxEvicted => "tx_evicted",
            EventKind::AlertRaised => "alert_raised",
            EventKind::ProposalBuilt => "proposal_built",
            EventKind::ProposalSigned => "proposal_signed",
            EventKind::EntryFlagged => "entry_flagged",
            EventKind::BlockCreated => "block_created",
            EventKind::BlockApplied => "block_applied",
            EventKind::BlockRejected => "block_rejected",
            EventKind::PointersRemoved => "pointers_removed",
            EventKind::BlockDeleted => "block_deleted",
            EventKind::Synced => "synced",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeEvent {
    pub kind: EventKind,
    pub digest: Digest,
    pub aux: u64,
}

/// Output of one handler call.
#[derive(Clone, Debug, Default)]
pub struct Effects {
    pub outbox: Vec<Message>,
    pub events: Vec<NodeEvent>,
}

impl Effects {
    pub fn new() -> Self {
        Self::default()
    }

    pub(crate) fn event(&mut self, kind: EventKind, digest: Digest, aux: u64) {
        self.events.push(NodeEvent { kind, digest, aux });
    }

    pub fn clear(&mut self) {
        self.outbox.clear();
        self.events.clear();
    }
}

/// What a handler may read from the outside world.
#[derive(Clone, Copy)]
pub struct Ctx<'a> {
    pub now: SimTime,
    pub ring: &'a KeyRing,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Carry {
    Tx(Digest),
    Ack(Digest),
    Proposal(Digest),
    Block(Digest),
}

#[derive(Clone, Debug)]
pub struct NodeState {
    pub id: UserId,
    signer: Signer,
    pub location: Location,
    pub params: ProtocolParams,
    pub config: NodeConfig,
    pub behavior: Behavior,
    pub trusted_network: BTreeSet<UserId>,
    tx_db: BTreeMap<Digest, TxRecord>,
    pending_list: BTreeMap<Digest, PendingRecord>,
    chain: ChainView,
    /// (sender, input) -> transaction spending it, over held and verified ones.
    by_input: BTreeMap<(UserId, Digest), Digest>,
    acks_seen: BTreeSet<Digest>,
    orphan_acks: BTreeMap<Digest, Ack>,
    rejected: BTreeSet<Digest>,
    alerts_seen: BTreeSet<(Digest, Digest)>,
    proposals: BTreeMap<Digest, BlockProposal>,
    /// Proposals dropped after a timeout, dispute or block; copies are ignored.
    dead_proposals: BTreeSet<Digest>,
    /// Transaction -> proposal currently holding it.
    claimed: BTreeMap<Digest, Digest>,
    blocks_seen: BTreeSet<Digest>,
    own_pending: BTreeSet<Digest>,
    reserved: BTreeSet<Digest>,
    carry: BTreeMap<Carry, SimTime>,
    pub last_update: SimTime,
}

impl NodeState {
    pub fn new(
        signer: Signer,
        location: Location,
        params: ProtocolParams,
        config: NodeConfig,
        trusted_network: BTreeSet<UserId>,
    ) -> Self {
        NodeState {
            id: signer.user(),
            signer,
            location,
            params,
            config,
            behavior: Behavior::honest(),
            trusted_network,
            tx_db: BTreeMap::new(),
            pending_list: BTreeMap::new(),
            chain: ChainView::new(params.m_vu),
            by_input: BTreeMap::new(),
            acks_seen: BTreeSet::new(),
            orphan_acks: BTreeMap::new(),
            rejected: BTreeSet::new(),
            alerts_seen: BTreeSet::new(),
            proposals: BTreeMap::new(),
            dead_proposals: BTreeSet::new(),
            claimed: BTreeMap::new(),
            blocks_seen: BTreeSet::new(),
            own_pending: BTreeSet::new(),
            reserved: BTreeSet::new(),
            carry: BTreeMap::new(),
            last_update: SimTime::ZERO,
        }
    }

    pub fn with_behavior(mut self, behavior: Behavior) -> Self {
        self.behavior = behavior;
        self
    }

    pub fn chain(&self) -> &ChainView {
        &self.chain
    }

    pub fn tx(&self, d: &Digest) -> Option<&TxRecord> {
        self.tx_db.get(d)
    }

    pub fn transactions(&self) -> impl Iterator<Item = (&Digest, &TxRecord)> {
        self.tx_db.iter()
    }

    pub fn pending_record(&self, d: &Digest) -> Option<&PendingRecord> {
        self.pending_list.get(d)
    }

    pub fn proposal(&self, id: &Digest) -> Option<&BlockProposal> {
        self.proposals.get(id)
    }

    pub fn proposals(&self) -> impl Iterator<Item = &BlockProposal> {
        self.proposals.values()
    }

    pub fn is_rejected(&self, d: &Digest) -> bool {
        self.rejected.contains(d)
    }

    pub fn holds(&self, d: &Digest) -> bool {
        self.tx_db.contains_key(d)
    }

    /// Verified unspent value owned by this node.
    pub fn balance(&self) -> Coins {
        self.chain.balance(self.id)
    }

    /// Location written into verifier entries.
    pub fn reported_location(&self) -> Location {
        self.behavior.claimed_location.unwrap_or(self.location)
    }

    /// Installs the bootstrap block every user starts from.
    pub fn install_genesis(&mut self, genesis: &Block) {
        if self.blocks_seen.insert(genesis.id) {
            self.chain.insert(genesis.clone(), genesis.created_at);
        }
    }

    fn lookup_tx(&self, d: &Digest) -> Option<(&Transaction, bool)> {
        if let Some(r) = self.tx_db.get(d) {
            return Some((&r.envelope.tx, r.status == TxStatus::Verified));
        }
        self.chain.transaction(d).map(|t| (t, true))
    }

    /// A different held or verified transaction by the same sender spending
    /// one of `tx`'s inputs.
    fn find_conflict(&self, tx: &Transaction) -> Option<Digest> {
        tx.inputs
            .iter()
            .filter_map(|i| self.by_input.get(&(tx.sender, *i)))
            .find(|d| **d != tx.id())
            .copied()
    }

    /// An input already spent by a verified transaction this node no longer stores.
    fn spends_settled_output(&self, tx: &Transaction) -> bool {
        tx.inputs
            .iter()
            .any(|i| self.chain.is_spent(i, tx.sender) && self.by_input.get(&(tx.sender, *i)) != Some(&tx.id()))
    }

    fn index_inputs(&mut self, tx: &Transaction) {
        for i in &tx.inputs {
            self.by_input.entry((tx.sender, *i)).or_insert(tx.id());
        }
    }

    fn unindex_inputs(&mut self, tx: &Transaction) {
        for i in &tx.inputs {
            if self.by_input.get(&(tx.sender, *i)) == Some(&tx.id()) {
                self.by_input.remove(&(tx.sender, *i));
            }
        }
    }

    fn carry(&mut self, item: Carry, now: SimTime) {
        let until = now + self.config.carry_ttl;
        let e = self.carry.entry(item).or_insert(until);
        *e = (*e).max(until);
    }

    /// Re-sends held messages; the driver calls this when the contact set
    /// gains a member, at most once per tick.
    pub fn on_contact(&mut self, ctx: Ctx<'_>, fx: &mut Effects) {
        let mut expired = Vec::new();
        for (item, until) in &self.carry {
            let own = matches!(item, Carry::Tx(d) if self.own_pending.contains(d));
            if !own && (*until < ctx.now || !self.config.carry_forward) {
                expired.push(*item);
                continue;
            }
            match item {
                Carry::Tx(d) => match self.tx_db.get(d) {
                    Some(r) if r.status == TxStatus::Pending && r.ack.is_none() => {
                        fx.outbox.push(Message::Transaction(r.envelope.clone()))
                    }
                    _ => expired.push(*item),
                },
                Carry::Ack(d) => match self.tx_db.get(d) {
                    Some(TxRecord { status: TxStatus::Pending, ack: Some(a), .. }) => {
                        fx.outbox.push(Message::Ack(a.clone()))
                    }
                    _ => expired.push(*item),
                },
                Carry::Proposal(p) => match self.proposals.get(p) {
                    Some(prop) => fx.outbox.push(Message::Proposal(prop.clone())),
                    None => expired.push(*item),
                },
                Carry::Block(b) => match self.chain.block(b) {
                    Some(block) => fx.outbox.push(Message::Block(block.clone())),
                    None => expired.push(*item),
                },
            }
        }
        for item in expired {
            self.carry.remove(&item);
        }
    }

    /// Periodic housekeeping: stale proposals release their transactions.
    pub fn on_tick(&mut self, ctx: Ctx<'_>, fx: &mut Effects) {
        let timeout = self.config.proposal_timeout;
        let stale: Vec<Digest> = self
            .proposals
            .iter()
            .filter(|(_, p)| p.created_at + timeout <= ctx.now)
            .map(|(id, _)| *id)
            .collect();
        if stale.is_empty() {
            return;
        }
        for id in &stale {
            self.drop_proposal(id);
        }
        self.maybe_build(ctx, fx);
    }

    /// Dispatches one received message.
    pub fn handle(&mut self, ctx: Ctx<'_>, msg: Message, from: UserId, fx: &mut Effects) {
        match msg {
            Message::Transaction(env) => self.on_transaction(ctx, env, from, fx),
            Message::Ack(ack) => self.on_ack(ctx, ack, fx),
            Message::Proposal(p) => self.on_proposal(ctx, p, from, fx),
            Message::Block(b) => {
                let _ = self.on_block(ctx, b, fx);
            }
            Message::Alert(a) => self.on_alert(ctx, a, fx),
        }
    }
}

/// Bootstrap block endowing users with coins minted by [`UserId::MINT`].
/// A user listed several times receives several separate outputs.
pub fn genesis_block(mint: &Signer, endowments: &[(&Signer, Coins)]) -> Block {
    let transactions: Vec<TxPair> = endowments
        .iter()
        .enumerate()
        .map(|(k, (user, amount))| {
            let tx = TransactionBody {
                sender: mint.user(),
                receiver: user.user(),
                inputs: Vec::new(),
                amount_to_receiver: *amount,
                change: Coins::ZERO,
                tx_fee: Coins::ZERO,
                block_fee: Coins::ZERO,
                balance_note: Coins::ZERO,
                timestamp: SimTime(k as u64),
            }
            .sign(mint);
            let ack = Ack::new(tx.id(), user.user(), user, SimTime::ZERO);
            TxPair { tx, ack }
        })
        .collect();
    Block {
        id: Block::compute_id(&transactions),
        verifiers: vec![Vec::new(); transactions.len()],
        transactions,
        parent_pointers: Vec::new(),
        child_pointer_count: 0,
        created_at: SimTime::ZERO,
    }
}

#[cfg(test)]
mod tests;
