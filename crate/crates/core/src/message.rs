//! Protocol messages: payments, acknowledgements, block proposals, blocks and
//! double-spend alerts.

use alloc::vec::Vec;
use core::ops::Deref;

use crate::attest::{Attestation, Signer};
use crate::types::{Coins, Digest, Location, SimTime, UserId};
use crate::wire;

/// Everything a payment states except the sender's attestation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TransactionBody {
    pub sender: UserId,
    pub receiver: UserId,
    /// Digests of the parent transactions whose outputs are being spent.
    pub inputs: Vec<Digest>,
    pub amount_to_receiver: Coins,
    pub change: Coins,
    pub tx_fee: Coins,
    pub block_fee: Coins,
    /// Sender's self-reported holdings; informational only.
    pub balance_note: Coins,
    pub timestamp: SimTime,
}

impl TransactionBody {
    /// Total value leaving the inputs.
    pub fn outputs_total(&self) -> Coins {
        self.amount_to_receiver + self.change + self.tx_fee + self.block_fee
    }

    pub fn digest(&self) -> Digest {
        Digest::of(&wire::encode_transaction_body(self))
    }

    pub fn sign(self, signer: &Signer) -> Transaction {
        let att = signer.attest(self.digest(), self.timestamp);
        Transaction::assemble(self, att)
    }

    pub fn is_genesis(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// A signed payment. The digest is cached at construction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Transaction {
    body: TransactionBody,
    sender_attestation: Attestation,
    id: Digest,
}

impl Transaction {
    pub(crate) fn assemble(body: TransactionBody, sender_attestation: Attestation) -> Self {
        let mut tx = Transaction { body, sender_attestation, id: Digest::ZERO };
        tx.id = Digest::of(&wire::encode_transaction(&tx));
        tx
    }

    pub fn id(&self) -> Digest {
        self.id
    }

    pub fn body(&self) -> &TransactionBody {
        &self.body
    }

    pub fn sender_attestation(&self) -> &Attestation {
        &self.sender_attestation
    }

    /// Whether two distinct transactions by the same sender spend a common input.
    pub fn conflicts_with(&self, other: &Transaction) -> bool {
        self.id != other.id
            && self.sender == other.sender
            && self.inputs.iter().any(|d| other.inputs.contains(d))
    }

    /// Earlier-wins ordering used to settle conflicts: timestamp, then digest.
    pub fn precedes(&self, other: &Transaction) -> bool {
        (self.timestamp, self.id) < (other.timestamp, other.id)
    }
}

impl Deref for Transaction {
    type Target = TransactionBody;
    fn deref(&self) -> &TransactionBody {
        &self.body
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, thiserror::Error)]
pub enum ConservationError {
    #[error("{values} input values supplied for {inputs} inputs")]
    LengthMismatch { inputs: usize, values: usize },
}

/// True iff the input values exactly cover receiver amount, change and fees.
pub fn check_conservation(tx: &TransactionBody, input_values: &[Coins]) -> Result<bool, ConservationError> {
    if input_values.len() != tx.inputs.len() {
        return Err(ConservationError::LengthMismatch { inputs: tx.inputs.len(), values: input_values.len() });
    }
    let total = input_values.iter().try_fold(Coins::ZERO, |acc, v| acc.checked_add(*v));
    let out = tx
        .amount_to_receiver
        .checked_add(tx.change)
        .and_then(|c| c.checked_add(tx.tx_fee))
        .and_then(|c| c.checked_add(tx.block_fee));
    Ok(matches!((total, out), (Some(a), Some(b)) if a == b))
}

/// Receiver's acceptance of a payment; names who collects the transaction fee.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Ack {
    pub tx: Digest,
    pub receiver: UserId,
    pub fee_recipient: UserId,
    pub attestation: Attestation,
}

impl Ack {
    pub fn signing_payload(tx: Digest, receiver: UserId, fee_recipient: UserId) -> Digest {
        let mut buf = Vec::with_capacity(48);
        buf.extend_from_slice(&tx.0);
        buf.extend_from_slice(&receiver.0.to_le_bytes());
        buf.extend_from_slice(&fee_recipient.0.to_le_bytes());
        Digest::of(&buf)
    }

    pub fn new(tx: Digest, fee_recipient: UserId, signer: &Signer, now: SimTime) -> Self {
        let payload = Self::signing_payload(tx, signer.user(), fee_recipient);
        Ack { tx, receiver: signer.user(), fee_recipient, attestation: signer.attest(payload, now) }
    }

    pub fn id(&self) -> Digest {
        Digest::of(&wire::encode_ack(self))
    }
}

/// A payment in flight together with the co-attestations collected so far.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TxEnvelope {
    pub tx: Transaction,
    pub co_attestations: Vec<Attestation>,
}

impl TxEnvelope {
    pub fn new(tx: Transaction) -> Self {
        TxEnvelope { tx, co_attestations: Vec::new() }
    }

    pub fn attested_by(&self, user: UserId) -> bool {
        self.co_attestations.iter().any(|a| a.signer() == user)
    }
}

/// One verifier's signed claim on a proposal entry.
#[derive(Clone, Debug, PartialEq)]
pub struct VerifierEntry {
    pub user: UserId,
    pub location: Location,
    pub attestation: Attestation,
    pub flagged_false: bool,
}

impl VerifierEntry {
    pub fn signing_payload(tx: Digest, location: Location) -> Digest {
        let mut buf = Vec::with_capacity(48);
        buf.extend_from_slice(&tx.0);
        buf.extend_from_slice(&location.x.to_le_bytes());
        buf.extend_from_slice(&location.y.to_le_bytes());
        Digest::of(&buf)
    }

    pub fn new(tx: Digest, location: Location, signer: &Signer, now: SimTime) -> Self {
        VerifierEntry {
            user: signer.user(),
            location,
            attestation: signer.attest(Self::signing_payload(tx, location), now),
            flagged_false: false,
        }
    }
}

/// A (transaction, ack) pair travelling through block creation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TxPair {
    pub tx: Transaction,
    pub ack: Ack,
}

/// A candidate block collecting verifier signatures.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockProposal {
    pub transactions: Vec<TxPair>,
    pub per_tx_verifiers: Vec<Vec<VerifierEntry>>,
    pub builder: UserId,
    pub builder_location: Location,
    /// Average pairwise distance among each transaction's unflagged verifiers.
    pub distance_vector: Vec<f64>,
    /// Entries zeroed after a double-spend was detected against them.
    pub disputed: Vec<bool>,
    pub created_at: SimTime,
}

impl BlockProposal {
    /// Identity shared by all copies of the same proposal.
    pub fn id(&self) -> Digest {
        let mut buf = Vec::with_capacity(16 + 32 * self.transactions.len());
        buf.extend_from_slice(&self.builder.0.to_le_bytes());
        buf.extend_from_slice(&self.created_at.0.to_le_bytes());
        for p in &self.transactions {
            buf.extend_from_slice(&p.tx.id().0);
        }
        Digest::of(&buf)
    }

    /// Ordering used when copies of different proposals compete for the same
    /// transactions: older first, then smaller id.
    pub fn priority_key(&self) -> (SimTime, Digest) {
        (self.created_at, self.id())
    }

    pub fn position_of(&self, tx: &Digest) -> Option<usize> {
        self.transactions.iter().position(|p| p.tx.id() == *tx)
    }
}

/// A created block.
#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub id: Digest,
    pub transactions: Vec<TxPair>,
    /// Final unflagged verifier set per transaction.
    pub verifiers: Vec<Vec<VerifierEntry>>,
    /// Per transaction: blocks holding its inputs.
    pub parent_pointers: Vec<Vec<Digest>>,
    pub child_pointer_count: u32,
    pub created_at: SimTime,
}

impl Block {
    /// Block identity depends only on the transactions it verifies, so every
    /// node that creates it from the same proposal agrees on the digest.
    pub fn compute_id(transactions: &[TxPair]) -> Digest {
        let mut buf = Vec::with_capacity(8 + 32 * transactions.len());
        buf.extend_from_slice(b"lc-block");
        for p in transactions {
            buf.extend_from_slice(&p.tx.id().0);
        }
        Digest::of(&buf)
    }

    /// Digest of the verifier sets, which copies of one block created by
    /// different nodes may disagree on.
    pub fn verifier_digest(&self) -> Digest {
        let mut buf = Vec::new();
        for vs in &self.verifiers {
            buf.extend_from_slice(&(vs.len() as u32).to_le_bytes());
            for v in vs {
                buf.extend_from_slice(&v.user.0.to_le_bytes());
                buf.push(v.flagged_false as u8);
            }
        }
        Digest::of(&buf)
    }

    pub fn tx_ids(&self) -> impl Iterator<Item = Digest> + '_ {
        self.transactions.iter().map(|p| p.tx.id())
    }

    /// The verifiers sharing block fee `i`: the first mVu unflagged ones.
    pub fn fee_sharers(&self, i: usize, m_vu: u32) -> &[VerifierEntry] {
        let v = &self.verifiers[i];
        &v[..v.len().min(m_vu as usize)]
    }
}

/// Evidence that a sender signed two transactions spending the same input.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DoubleSpendAlert {
    pub first: Transaction,
    pub second: Transaction,
    pub reporter: UserId,
    pub attestation: Attestation,
}

impl DoubleSpendAlert {
    pub fn signing_payload(first: &Digest, second: &Digest) -> Digest {
        let mut buf = [0u8; 64];
        buf[..32].copy_from_slice(&first.0);
        buf[32..].copy_from_slice(&second.0);
        Digest::of(&buf)
    }

    /// Builds an alert; `a` and `b` are ordered so that `first` precedes.
    pub fn new(a: Transaction, b: Transaction, signer: &Signer, now: SimTime) -> Self {
        let (first, second) = if a.precedes(&b) { (a, b) } else { (b, a) };
        let payload = Self::signing_payload(&first.id(), &second.id());
        DoubleSpendAlert { first, second, reporter: signer.user(), attestation: signer.attest(payload, now) }
    }

    /// Key identifying the conflict regardless of reporter.
    pub fn conflict_key(&self) -> (Digest, Digest) {
        (self.first.id(), self.second.id())
    }
}

/// Anything that travels over the air.
#[derive(Clone, Debug, PartialEq)]
pub enum Message {
    Transaction(TxEnvelope),
    Ack(Ack),
    Proposal(BlockProposal),
    Block(Block),
    Alert(DoubleSpendAlert),
}

impl Message {
    pub fn kind(&self) -> &'static str {
        match self {
            Message::Transaction(_) => "tx",
            Message::Ack(_) => "ack",
            Message::Proposal(_) => "proposal",
            Message::Block(_) => "block",
            Message::Alert(_) => "alert",
        }
    }

    /// Digest of the principal object the message is about.
    pub fn subject(&self) -> Digest {
        match self {
            Message::Transaction(e) => e.tx.id(),
            Message::Ack(a) => a.tx,
            Message::Proposal(p) => p.id(),
            Message::Block(b) => b.id,
            Message::Alert(a) => a.second.id(),
        }
    }
}
