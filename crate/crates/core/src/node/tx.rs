use alloc::vec::Vec;

use super::{Carry, Ctx, EventKind, NodeState, PendingRecord, TxRecord, TxStatus};
use crate::message::{check_conservation, Ack, DoubleSpendAlert, Message, Transaction, TransactionBody, TxEnvelope};
use crate::node::Effects;
use crate::types::{Coins, Digest, UserId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, thiserror::Error)]
pub enum SendError {
    #[error("verified balance {available} does not cover {needed}")]
    InsufficientFunds { available: Coins, needed: Coins },
    #[error("amount overflow")]
    Overflow,
}

impl NodeState {
    /// Pays `amount` to `receiver`, funding it from verified unspent outputs
    /// (oldest first) not already committed to a pending payment.
    pub fn send(
        &mut self,
        ctx: Ctx<'_>,
        receiver: UserId,
        amount: Coins,
        fees: (Coins, Coins),
        fx: &mut Effects,
    ) -> Result<Transaction, SendError> {
        let needed = amount
            .checked_add(fees.0)
            .and_then(|c| c.checked_add(fees.1))
            .ok_or(SendError::Overflow)?;
        let mut inputs = Vec::new();
        let mut total = Coins::ZERO;
        let mut available = Coins::ZERO;
        for (d, c) in self.chain.unspent_outputs(self.id) {
            if self.reserved.contains(&d) {
                continue;
            }
            available += c;
            if total < needed || needed == Coins::ZERO && inputs.is_empty() {
                total += c;
                inputs.push(d);
            }
        }
        if total < needed || inputs.is_empty() {
            return Err(SendError::InsufficientFunds { available, needed });
        }
        let body = TransactionBody {
            sender: self.id,
            receiver,
            inputs,
            amount_to_receiver: amount,
            change: total - needed,
            tx_fee: fees.0,
            block_fee: fees.1,
            balance_note: self.balance(),
            timestamp: ctx.now,
        };
        self.reserved.extend(body.inputs.iter().copied());
        Ok(self.emit_transaction(ctx, body, fx))
    }

    /// Signs `body` as this node and broadcasts it without checking funds.
    /// Scripted scenarios and attackers use this directly.
    pub fn emit_transaction(&mut self, ctx: Ctx<'_>, body: TransactionBody, fx: &mut Effects) -> Transaction {
        let tx = body.sign(&self.signer);
        let d = tx.id();
        fx.event(EventKind::TxCreated, d, tx.inputs.len() as u64);
        self.own_pending.insert(d);
        self.store(ctx, TxEnvelope::new(tx.clone()), fx);
        fx.outbox.push(Message::Transaction(TxEnvelope::new(tx.clone())));
        self.carry(Carry::Tx(d), ctx.now);
        tx
    }

    /// Takes a transaction handed over outside the radio (a colluder receiving
    /// a fake from its attacker) and broadcasts it as if just received.
    pub fn inject(&mut self, ctx: Ctx<'_>, env: TxEnvelope, fx: &mut Effects) {
        let d = env.tx.id();
        if !self.tx_db.contains_key(&d) {
            self.store(ctx, env.clone(), fx);
        }
        fx.outbox.push(Message::Transaction(env));
        self.carry(Carry::Tx(d), ctx.now);
    }

    fn store(&mut self, ctx: Ctx<'_>, envelope: TxEnvelope, fx: &mut Effects) {
        let d = envelope.tx.id();
        let ack = self.orphan_acks.remove(&d);
        self.index_inputs(&envelope.tx);
        self.tx_db.insert(d, TxRecord { envelope, status: TxStatus::Pending, first_seen: ctx.now, ack });
        fx.event(EventKind::TxStored, d, 0);
    }

    /// Credits `tx.sender` holds on each input, if all are known and unspent.
    pub fn input_values(&self, tx: &TransactionBody) -> Option<Vec<Coins>> {
        tx.inputs.iter().map(|d| self.chain.credit(d, tx.sender)).collect()
    }

    /// Every input resolves to a verified unspent output of the sender and
    /// the amounts balance.
    pub fn can_validate(&self, tx: &TransactionBody) -> bool {
        !tx.inputs.is_empty()
            && self.input_values(tx).is_some_and(|v| check_conservation(tx, &v) == Ok(true))
    }

    fn valid_envelope(&self, ctx: Ctx<'_>, env: &TxEnvelope) -> bool {
        let tx = &env.tx;
        ctx.ring.verify_for(tx.sender_attestation(), tx.sender, &tx.body().digest())
            && env.co_attestations.iter().all(|a| a.payload() == tx.id() && ctx.ring.verify(a))
    }

    fn co_attest(&mut self, ctx: Ctx<'_>, d: &Digest, fx: &mut Effects) {
        let Some(rec) = self.tx_db.get_mut(d) else { return };
        if rec.envelope.attested_by(self.id) {
            return;
        }
        rec.envelope.co_attestations.push(self.signer.attest(*d, ctx.now));
        fx.event(EventKind::TxAttested, *d, 0);
    }

    pub fn on_transaction(&mut self, ctx: Ctx<'_>, env: TxEnvelope, from: UserId, fx: &mut Effects) {
        let d = env.tx.id();
        if self.rejected.contains(&d) || env.tx.is_genesis() {
            return;
        }
        if let Some(rec) = self.tx_db.get_mut(&d) {
            let mut fresh = false;
            for a in env.co_attestations {
                if !rec.envelope.attested_by(a.signer()) && a.payload() == d && ctx.ring.verify(&a) {
                    rec.envelope.co_attestations.push(a);
                    fresh = true;
                }
            }
            if !fresh || rec.status != TxStatus::Pending {
                return;
            }
            if env.tx.receiver == self.id {
                self.process(ctx, d, from, fx);
            } else {
                fx.outbox.push(Message::Transaction(rec.envelope.clone()));
            }
            return;
        }
        if self.chain.block_of(&d).is_some() || !self.valid_envelope(ctx, &env) {
            return;
        }
        if let Some(values) = self.input_values(&env.tx) {
            if check_conservation(&env.tx, &values) != Ok(true) {
                return;
            }
        }
        if !self.behavior.ignore_conflicts {
            if self.spends_settled_output(&env.tx) {
                self.rejected.insert(d);
                fx.event(EventKind::TxRejected, d, 0);
                return;
            }
            if let Some(c) = self.find_conflict(&env.tx) {
                let (other, verified) = self.lookup_tx(&c).map(|(t, v)| (t.clone(), v)).expect("indexed");
                if verified || other.precedes(&env.tx) {
                    self.rejected.insert(d);
                    fx.event(EventKind::TxRejected, d, 0);
                    self.raise_alert(ctx, other, env.tx, fx);
                    return;
                }
                self.evict(&c, fx);
                self.raise_alert(ctx, env.tx.clone(), other, fx);
            }
        }
        let receiver = env.tx.receiver;
        let tx_body = env.tx.body().clone();
        let from_signed = env.attested_by(from);
        self.store(ctx, env, fx);
        if receiver == self.id {
            self.pending_list.insert(
                d,
                PendingRecord { first_notifier: from, trusted_signers: Default::default(), acked: false },
            );
            self.process(ctx, d, from, fx);
        } else {
            let vouch = self.trusted_network.contains(&receiver)
                && (self.behavior.attest_everything || self.can_validate(&tx_body));
            let relay = self.trusted_network.contains(&from) && from_signed;
            if vouch || relay {
                self.co_attest(ctx, &d, fx);
            }
            fx.outbox.push(Message::Transaction(self.tx_db[&d].envelope.clone()));
            self.carry(Carry::Tx(d), ctx.now);
        }
        self.maybe_build(ctx, fx);
    }

    /// Receiver side: count trusted co-attestations and acknowledge once the
    /// threshold is met, naming the first notifier as fee recipient.
    pub fn process(&mut self, ctx: Ctx<'_>, d: Digest, from: UserId, fx: &mut Effects) {
        let Some(rec) = self.tx_db.get(&d) else { return };
        let signers: Vec<UserId> = rec
            .envelope
            .co_attestations
            .iter()
            .map(|a| a.signer())
            .filter(|u| self.trusted_network.contains(u))
            .collect();
        let pending = self.pending_list.entry(d).or_insert(PendingRecord {
            first_notifier: from,
            trusted_signers: Default::default(),
            acked: false,
        });
        pending.trusted_signers.extend(signers);
        if pending.acked || !self.params.accepts(pending.trusted_count()) {
            return;
        }
        pending.acked = true;
        let ack = Ack::new(d, pending.first_notifier, &self.signer, ctx.now);
        fx.event(EventKind::TxAcked, d, pending.first_notifier.0);
        self.acks_seen.insert(d);
        if let Some(r) = self.tx_db.get_mut(&d) {
            r.ack = Some(ack.clone());
        }
        fx.outbox.push(Message::Ack(ack));
        self.carry(Carry::Ack(d), ctx.now);
        self.maybe_build(ctx, fx);
    }

    pub fn on_ack(&mut self, ctx: Ctx<'_>, ack: Ack, fx: &mut Effects) {
        let payload = Ack::signing_payload(ack.tx, ack.receiver, ack.fee_recipient);
        if !ctx.ring.verify_for(&ack.attestation, ack.receiver, &payload) || self.acks_seen.contains(&ack.tx) {
            return;
        }
        let d = ack.tx;
        match self.tx_db.get_mut(&d) {
            Some(rec) => {
                if rec.envelope.tx.receiver != ack.receiver {
                    return;
                }
                if rec.ack.is_none() {
                    rec.ack = Some(ack.clone());
                    fx.event(EventKind::AckStored, d, 0);
                }
                self.own_pending.remove(&d);
                self.carry.remove(&Carry::Tx(d));
            }
            None if self.rejected.contains(&d) => return,
            None => {
                self.orphan_acks.insert(d, ack.clone());
            }
        }
        self.acks_seen.insert(d);
        fx.outbox.push(Message::Ack(ack));
        self.carry(Carry::Ack(d), ctx.now);
        self.maybe_build(ctx, fx);
    }

    /// Drops a held pending transaction that lost a conflict.
    pub(crate) fn evict(&mut self, d: &Digest, fx: &mut Effects) {
        self.rejected.insert(*d);
        let Some(rec) = self.tx_db.get(d) else { return };
        if rec.status != TxStatus::Pending {
            return;
        }
        let tx = rec.envelope.tx.clone();
        self.tx_db.remove(d);
        self.unindex_inputs(&tx);
        self.pending_list.remove(d);
        self.own_pending.remove(d);
        self.carry.remove(&Carry::Tx(*d));
        self.carry.remove(&Carry::Ack(*d));
        if let Some(pid) = self.claimed.get(d).copied() {
            self.drop_proposal(&pid);
        }
        fx.event(EventKind::TxEvicted, *d, 0);
    }

    pub(crate) fn raise_alert(&mut self, ctx: Ctx<'_>, a: Transaction, b: Transaction, fx: &mut Effects) {
        if self.behavior.suppress_alerts {
            return;
        }
        let alert = DoubleSpendAlert::new(a, b, &self.signer, ctx.now);
        if self.alerts_seen.insert(alert.conflict_key()) {
            fx.event(EventKind::AlertRaised, alert.second.id(), alert.first.id().prefix_u64());
            fx.outbox.push(Message::Alert(alert));
        }
    }

    pub fn on_alert(&mut self, ctx: Ctx<'_>, alert: DoubleSpendAlert, fx: &mut Effects) {
        if self.behavior.suppress_alerts {
            return;
        }
        let (first, second) = (&alert.first, &alert.second);
        let valid = ctx.ring.verify_for(
            &alert.attestation,
            alert.reporter,
            &DoubleSpendAlert::signing_payload(&first.id(), &second.id()),
        ) && ctx.ring.verify_for(first.sender_attestation(), first.sender, &first.body().digest())
            && ctx.ring.verify_for(second.sender_attestation(), second.sender, &second.body().digest())
            && first.conflicts_with(second)
            && first.precedes(second);
        if !valid || !self.alerts_seen.insert(alert.conflict_key()) {
            return;
        }
        let loser = second.id();
        // a verified transaction stays; only pending ones can lose
        if self.chain.block_of(&loser).is_none() {
            self.evict(&loser, fx);
        }
        fx.outbox.push(Message::Alert(alert));
    }
}
