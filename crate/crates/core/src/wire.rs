//! Bit-exact binary encoding of protocol messages.
//!
//! All integers are little-endian and fixed width; floats are IEEE-754
//! binary64. Every top-level object starts with an 8-byte header:
//!
//! | offset | size | field                          |
//! |-------:|-----:|--------------------------------|
//! | 0      | 2    | magic `"LC"`                   |
//! | 2      | 1    | kind (see [`Kind`])            |
//! | 3      | 1    | format version (1)             |
//! | 4      | 4    | reserved, zero                 |
//!
//! A transaction with `k` inputs is exactly `32·k + 160` bytes:
//!
//! | offset      | size | field              |
//! |------------:|-----:|--------------------|
//! | 0           | 8    | header             |
//! | 8           | 8    | sender             |
//! | 16          | 8    | receiver           |
//! | 24          | 8    | input count `k`    |
//! | 32          | 32·k | input digests      |
//! | 32+32k      | 8    | amount_to_receiver |
//! | 40+32k      | 8    | change             |
//! | 48+32k      | 8    | tx_fee             |
//! | 56+32k      | 8    | block_fee          |
//! | 64+32k      | 8    | balance_note       |
//! | 72+32k      | 8    | timestamp (ms)     |
//! | 80+32k      | 80   | sender attestation |
//!
//! An attestation is `signer u64 | payload [32] | timestamp u64 | seal [32]`.
//! The signed body of a transaction is its encoding without the trailing
//! attestation. Other layouts are documented in `docs/wire-format.md`.

use alloc::vec::Vec;

use crate::attest::Attestation;
use crate::message::{
    Ack, Block, BlockProposal, DoubleSpendAlert, Message, Transaction, TransactionBody, TxEnvelope, TxPair,
    VerifierEntry,
};
use crate::types::{Coins, Digest, Location, SimTime, UserId};

pub const MAGIC: [u8; 2] = *b"LC";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 8;
pub const ATTESTATION_LEN: usize = 80;
pub const VERIFIER_ENTRY_LEN: usize = 8 + 16 + ATTESTATION_LEN + 1;
pub const ACK_LEN: usize = HEADER_LEN + 32 + 8 + 8 + ATTESTATION_LEN;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum Kind {
    Transaction = 1,
    Ack = 2,
    Envelope = 3,
    Proposal = 4,
    Block = 5,
    Alert = 6,
}

impl Kind {
    fn from_u8(b: u8) -> Option<Kind> {
        Some(match b {
            1 => Kind::Transaction,
            2 => Kind::Ack,
            3 => Kind::Envelope,
            4 => Kind::Proposal,
            5 => Kind::Block,
            6 => Kind::Alert,
            _ => return None,
        })
    }
}

/// Serialized size of a transaction with `inputs` inputs.
pub const fn transaction_len(inputs: usize) -> usize {
    32 * inputs + 160
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, thiserror::Error)]
pub enum WireError {
    #[error("input ended after {0} bytes")]
    Truncated(usize),
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported format version {0}")]
    BadVersion(u8),
    #[error("unknown message kind {0}")]
    UnknownKind(u8),
    #[error("expected kind {expected:?}, found {found:?}")]
    UnexpectedKind { expected: Kind, found: Kind },
    #[error("item count {0} exceeds remaining input")]
    Count(u64),
    #[error("invalid flag byte {0}")]
    Flag(u8),
    #[error("{0} trailing bytes")]
    Trailing(usize),
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn with_capacity(n: usize) -> Self {
        Writer { buf: Vec::with_capacity(n) }
    }
    fn header(&mut self, kind: Kind) {
        self.buf.extend_from_slice(&MAGIC);
        self.buf.push(kind as u8);
        self.buf.push(VERSION);
        self.buf.extend_from_slice(&[0; 4]);
    }
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn digest(&mut self, d: &Digest) {
        self.buf.extend_from_slice(&d.0);
    }
    fn location(&mut self, l: &Location) {
        self.f64(l.x);
        self.f64(l.y);
    }
    fn attestation(&mut self, a: &Attestation) {
        self.u64(a.signer().0);
        self.digest(&a.payload());
        self.u64(a.timestamp().0);
        self.buf.extend_from_slice(a.seal());
    }
    fn len(&mut self, n: usize) {
        self.u64(n as u64);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        if self.buf.len() - self.pos < n {
            return Err(WireError::Truncated(self.buf.len()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
    fn header(&mut self) -> Result<Kind, WireError> {
        let h = self.take(HEADER_LEN)?;
        if h[..2] != MAGIC {
            return Err(WireError::BadMagic);
        }
        if h[3] != VERSION {
            return Err(WireError::BadVersion(h[3]));
        }
        Kind::from_u8(h[2]).ok_or(WireError::UnknownKind(h[2]))
    }
    fn expect(&mut self, kind: Kind) -> Result<(), WireError> {
        let found = self.header()?;
        if found != kind {
            return Err(WireError::UnexpectedKind { expected: kind, found });
        }
        Ok(())
    }
    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }
    fn u64(&mut self) -> Result<u64, WireError> {
        let mut b = [0u8; 8];
        b.copy_from_slice(self.take(8)?);
        Ok(u64::from_le_bytes(b))
    }
    fn f64(&mut self) -> Result<f64, WireError> {
        Ok(f64::from_bits(self.u64()?))
    }
    fn bool(&mut self) -> Result<bool, WireError> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            b => Err(WireError::Flag(b)),
        }
    }
    fn digest(&mut self) -> Result<Digest, WireError> {
        let mut d = [0u8; 32];
        d.copy_from_slice(self.take(32)?);
        Ok(Digest(d))
    }
    fn location(&mut self) -> Result<Location, WireError> {
        Ok(Location { x: self.f64()?, y: self.f64()? })
    }
    fn attestation(&mut self) -> Result<Attestation, WireError> {
        let signer = UserId(self.u64()?);
        let payload = self.digest()?;
        let ts = SimTime(self.u64()?);
        let mut seal = [0u8; 32];
        seal.copy_from_slice(self.take(32)?);
        Ok(Attestation::from_wire(signer, payload, ts, seal))
    }
    /// Reads a count, rejecting values that cannot fit in the remaining input.
    fn count(&mut self, min_item: usize) -> Result<usize, WireError> {
        let n = self.u64()?;
        if n > (self.remaining() / min_item.max(1)) as u64 {
            return Err(WireError::Count(n));
        }
        Ok(n as usize)
    }
    fn finish(self) -> Result<(), WireError> {
        match self.remaining() {
            0 => Ok(()),
            n => Err(WireError::Trailing(n)),
        }
    }
}

fn put_body(w: &mut Writer, b: &TransactionBody) {
    w.header(Kind::Transaction);
    w.u64(b.sender.0);
    w.u64(b.receiver.0);
    w.len(b.inputs.len());
    for d in &b.inputs {
        w.digest(d);
    }
    w.u64(b.amount_to_receiver.0);
    w.u64(b.change.0);
    w.u64(b.tx_fee.0);
    w.u64(b.block_fee.0);
    w.u64(b.balance_note.0);
    w.u64(b.timestamp.0);
}

fn put_tx(w: &mut Writer, tx: &Transaction) {
    put_body(w, tx.body());
    w.attestation(tx.sender_attestation());
}

fn get_tx(r: &mut Reader<'_>) -> Result<Transaction, WireError> {
    r.expect(Kind::Transaction)?;
    let sender = UserId(r.u64()?);
    let receiver = UserId(r.u64()?);
    let n = r.count(32)?;
    let mut inputs = Vec::with_capacity(n);
    for _ in 0..n {
        inputs.push(r.digest()?);
    }
    let body = TransactionBody {
        sender,
        receiver,
        inputs,
        amount_to_receiver: Coins(r.u64()?),
        change: Coins(r.u64()?),
        tx_fee: Coins(r.u64()?),
        block_fee: Coins(r.u64()?),
        balance_note: Coins(r.u64()?),
        timestamp: SimTime(r.u64()?),
    };
    let att = r.attestation()?;
    Ok(Transaction::assemble(body, att))
}

fn put_ack(w: &mut Writer, a: &Ack) {
    w.header(Kind::Ack);
    w.digest(&a.tx);
    w.u64(a.receiver.0);
    w.u64(a.fee_recipient.0);
    w.attestation(&a.attestation);
}

fn get_ack(r: &mut Reader<'_>) -> Result<Ack, WireError> {
    r.expect(Kind::Ack)?;
    Ok(Ack { tx: r.digest()?, receiver: UserId(r.u64()?), fee_recipient: UserId(r.u64()?), attestation: r.attestation()? })
}

fn put_entries(w: &mut Writer, entries: &[VerifierEntry]) {
    w.len(entries.len());
    for e in entries {
        w.u64(e.user.0);
        w.location(&e.location);
        w.attestation(&e.attestation);
        w.u8(e.flagged_false as u8);
    }
}

fn get_entries(r: &mut Reader<'_>) -> Result<Vec<VerifierEntry>, WireError> {
    let n = r.count(VERIFIER_ENTRY_LEN)?;
    let mut v = Vec::with_capacity(n);
    for _ in 0..n {
        v.push(VerifierEntry {
            user: UserId(r.u64()?),
            location: r.location()?,
            attestation: r.attestation()?,
            flagged_false: r.bool()?,
        });
    }
    Ok(v)
}

fn put_pairs(w: &mut Writer, pairs: &[TxPair]) {
    w.len(pairs.len());
    for p in pairs {
        put_tx(w, &p.tx);
        put_ack(w, &p.ack);
    }
}

fn get_pairs(r: &mut Reader<'_>) -> Result<Vec<TxPair>, WireError> {
    let n = r.count(transaction_len(0) + ACK_LEN)?;
    let mut v = Vec::with_capacity(n);
    for _ in 0..n {
        v.push(TxPair { tx: get_tx(r)?, ack: get_ack(r)? });
    }
    Ok(v)
}

fn put_envelope(w: &mut Writer, e: &TxEnvelope) {
    w.header(Kind::Envelope);
    put_tx(w, &e.tx);
    w.len(e.co_attestations.len());
    for a in &e.co_attestations {
        w.attestation(a);
    }
}

fn get_envelope(r: &mut Reader<'_>) -> Result<TxEnvelope, WireError> {
    r.expect(Kind::Envelope)?;
    let tx = get_tx(r)?;
    let n = r.count(ATTESTATION_LEN)?;
    let mut co = Vec::with_capacity(n);
    for _ in 0..n {
        co.push(r.attestation()?);
    }
    Ok(TxEnvelope { tx, co_attestations: co })
}

fn put_proposal(w: &mut Writer, p: &BlockProposal) {
    w.header(Kind::Proposal);
    put_pairs(w, &p.transactions);
    w.len(p.per_tx_verifiers.len());
    for v in &p.per_tx_verifiers {
        put_entries(w, v);
    }
    w.u64(p.builder.0);
    w.location(&p.builder_location);
    w.len(p.distance_vector.len());
    for d in &p.distance_vector {
        w.f64(*d);
    }
    w.len(p.disputed.len());
    for d in &p.disputed {
        w.u8(*d as u8);
    }
    w.u64(p.created_at.0);
}

fn get_proposal(r: &mut Reader<'_>) -> Result<BlockProposal, WireError> {
    r.expect(Kind::Proposal)?;
    let transactions = get_pairs(r)?;
    let n = r.count(8)?;
    let mut per_tx_verifiers = Vec::with_capacity(n);
    for _ in 0..n {
        per_tx_verifiers.push(get_entries(r)?);
    }
    let builder = UserId(r.u64()?);
    let builder_location = r.location()?;
    let n = r.count(8)?;
    let mut distance_vector = Vec::with_capacity(n);
    for _ in 0..n {
        distance_vector.push(r.f64()?);
    }
    let n = r.count(1)?;
    let mut disputed = Vec::with_capacity(n);
    for _ in 0..n {
        disputed.push(r.bool()?);
    }
    Ok(BlockProposal {
        transactions,
        per_tx_verifiers,
        builder,
        builder_location,
        distance_vector,
        disputed,
        created_at: SimTime(r.u64()?),
    })
}

fn put_block(w: &mut Writer, b: &Block) {
    w.header(Kind::Block);
    w.digest(&b.id);
    put_pairs(w, &b.transactions);
    w.len(b.verifiers.len());
    for v in &b.verifiers {
        put_entries(w, v);
    }
    w.len(b.parent_pointers.len());
    for ps in &b.parent_pointers {
        w.len(ps.len());
        for d in ps {
            w.digest(d);
        }
    }
    w.u64(b.child_pointer_count as u64);
    w.u64(b.created_at.0);
}

fn get_block(r: &mut Reader<'_>) -> Result<Block, WireError> {
    r.expect(Kind::Block)?;
    let id = r.digest()?;
    let transactions = get_pairs(r)?;
    let n = r.count(8)?;
    let mut verifiers = Vec::with_capacity(n);
    for _ in 0..n {
        verifiers.push(get_entries(r)?);
    }
    let n = r.count(8)?;
    let mut parent_pointers = Vec::with_capacity(n);
    for _ in 0..n {
        let k = r.count(32)?;
        let mut ps = Vec::with_capacity(k);
        for _ in 0..k {
            ps.push(r.digest()?);
        }
        parent_pointers.push(ps);
    }
    let child_pointer_count = r.u64()? as u32;
    Ok(Block { id, transactions, verifiers, parent_pointers, child_pointer_count, created_at: SimTime(r.u64()?) })
}

fn put_alert(w: &mut Writer, a: &DoubleSpendAlert) {
    w.header(Kind::Alert);
    put_tx(w, &a.first);
    put_tx(w, &a.second);
    w.u64(a.reporter.0);
    w.attestation(&a.attestation);
}

fn get_alert(r: &mut Reader<'_>) -> Result<DoubleSpendAlert, WireError> {
    r.expect(Kind::Alert)?;
    Ok(DoubleSpendAlert { first: get_tx(r)?, second: get_tx(r)?, reporter: UserId(r.u64()?), attestation: r.attestation()? })
}

pub fn encode_transaction_body(b: &TransactionBody) -> Vec<u8> {
    let mut w = Writer::with_capacity(transaction_len(b.inputs.len()) - ATTESTATION_LEN);
    put_body(&mut w, b);
    w.buf
}

pub fn encode_transaction(tx: &Transaction) -> Vec<u8> {
    let mut w = Writer::with_capacity(transaction_len(tx.inputs.len()));
    put_tx(&mut w, tx);
    w.buf
}

/// Serializes a transaction: `32·|inputs| + 160` bytes.
pub fn serialize_transaction(tx: &Transaction) -> Vec<u8> {
    encode_transaction(tx)
}

pub fn decode_transaction(bytes: &[u8]) -> Result<Transaction, WireError> {
    let mut r = Reader::new(bytes);
    let tx = get_tx(&mut r)?;
    r.finish()?;
    Ok(tx)
}

pub fn encode_ack(a: &Ack) -> Vec<u8> {
    let mut w = Writer::with_capacity(ACK_LEN);
    put_ack(&mut w, a);
    w.buf
}

pub fn decode_ack(bytes: &[u8]) -> Result<Ack, WireError> {
    let mut r = Reader::new(bytes);
    let a = get_ack(&mut r)?;
    r.finish()?;
    Ok(a)
}

pub fn encode_block(b: &Block) -> Vec<u8> {
    let mut w = Writer::with_capacity(256);
    put_block(&mut w, b);
    w.buf
}

pub fn decode_block(bytes: &[u8]) -> Result<Block, WireError> {
    let mut r = Reader::new(bytes);
    let b = get_block(&mut r)?;
    r.finish()?;
    Ok(b)
}

pub fn encode_message(m: &Message) -> Vec<u8> {
    let mut w = Writer::with_capacity(256);
    match m {
        Message::Transaction(e) => put_envelope(&mut w, e),
        Message::Ack(a) => put_ack(&mut w, a),
        Message::Proposal(p) => put_proposal(&mut w, p),
        Message::Block(b) => put_block(&mut w, b),
        Message::Alert(a) => put_alert(&mut w, a),
    }
    w.buf
}

pub fn decode_message(bytes: &[u8]) -> Result<Message, WireError> {
    let mut peek = Reader::new(bytes);
    let kind = peek.header()?;
    let mut r = Reader::new(bytes);
    let m = match kind {
        Kind::Envelope => Message::Transaction(get_envelope(&mut r)?),
        Kind::Ack => Message::Ack(get_ack(&mut r)?),
        Kind::Proposal => Message::Proposal(get_proposal(&mut r)?),
        Kind::Block => Message::Block(get_block(&mut r)?),
        Kind::Alert => Message::Alert(get_alert(&mut r)?),
        Kind::Transaction => Message::Transaction(TxEnvelope::new(get_tx(&mut r)?)),
    };
    r.finish()?;
    Ok(m)
}
