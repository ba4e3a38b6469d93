use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec;
use alloc::vec::Vec;

use super::*;
use crate::message::{BlockProposal, VerifierEntry};

const TEN: Coins = Coins::from_coins(10);

fn c(millis: u64) -> Coins {
    Coins::from_millis(millis)
}

struct World {
    ring: KeyRing,
    signers: Vec<Signer>,
    nodes: Vec<NodeState>,
    genesis: Block,
    now: SimTime,
    log: Vec<(usize, NodeEvent)>,
}

impl World {
    /// Everyone trusts everyone; users listed in `funded` start with 10 coins.
    fn new(locs: &[(f64, f64)], params: ProtocolParams, funded: &[usize]) -> Self {
        Self::with_config(locs, params, funded, NodeConfig::default())
    }

    fn with_config(locs: &[(f64, f64)], params: ProtocolParams, funded: &[usize], config: NodeConfig) -> Self {
        let mut ring = KeyRing::new(11);
        let mint = ring.issue(UserId::MINT).unwrap();
        let signers: Vec<Signer> = (0..locs.len()).map(|i| ring.issue(UserId(i as u64)).unwrap()).collect();
        let endow: Vec<(&Signer, Coins)> = funded.iter().map(|&i| (&signers[i], TEN)).collect();
        let genesis = genesis_block(&mint, &endow);
        let all: BTreeSet<UserId> = (0..locs.len() as u64).map(UserId).collect();
        let nodes = signers
            .iter()
            .zip(locs)
            .map(|(s, &(x, y))| {
                let mut tn = all.clone();
                tn.remove(&s.user());
                let mut n = NodeState::new(s.clone(), Location::new(x, y), params, config, tn);
                n.install_genesis(&genesis);
                n
            })
            .collect();
        World { ring, signers, nodes, genesis, now: SimTime::from_secs(1), log: Vec::new() }
    }

    /// Delivers `msg` from `from` to `to`, returning what `to` emits.
    fn deliver(&mut self, from: usize, to: usize, msg: Message) -> Effects {
        let mut fx = Effects::new();
        let ctx = Ctx { now: self.now, ring: &self.ring };
        self.nodes[to].handle(ctx, msg, UserId(from as u64), &mut fx);
        self.log.extend(fx.events.iter().map(|e| (to, *e)));
        fx
    }

    /// Runs broadcasts to quiescence over a fully connected network, except
    /// for nodes in `offline`. One round per tick.
    fn flood(&mut self, origin: usize, first: Vec<Message>, offline: &[usize]) {
        let mut queue: Vec<(usize, Message)> = first.into_iter().map(|m| (origin, m)).collect();
        for _ in 0..200 {
            if queue.is_empty() {
                return;
            }
            self.now = self.now + SimTime(1);
            let mut next = Vec::new();
            for (from, msg) in queue {
                for to in 0..self.nodes.len() {
                    if to == from || offline.contains(&to) {
                        continue;
                    }
                    let fx = self.deliver(from, to, msg.clone());
                    next.extend(fx.outbox.into_iter().map(|m| (to, m)));
                }
            }
            queue = next;
        }
        panic!("broadcast did not settle");
    }

    fn send(&mut self, from: usize, to: usize, amount: Coins, fees: (Coins, Coins)) -> (Transaction, Vec<Message>) {
        let mut fx = Effects::new();
        let ctx = Ctx { now: self.now, ring: &self.ring };
        let tx = self.nodes[from].send(ctx, UserId(to as u64), amount, fees, &mut fx).unwrap();
        (tx, fx.outbox)
    }

    fn events(&self, kind: EventKind) -> Vec<(usize, NodeEvent)> {
        self.log.iter().filter(|(_, e)| e.kind == kind).copied().collect()
    }
}

fn params(m_tr: u32, block_size: u32, m_vu: u32, avd: f64) -> ProtocolParams {
    ProtocolParams { m_tr, block_size, m_vu, avd, r_cov: 0.5, ..Default::default() }
}

fn only_tx(msgs: &[Message]) -> TxEnvelope {
    match msgs {
        [Message::Transaction(env)] => env.clone(),
        other => panic!("expected one transaction, got {other:?}"),
    }
}

#[test]
fn send_returns_change() {
    let mut w = World::new(&[(0.0, 0.0), (0.1, 0.0)], params(0, 5, 5, 0.0), &[0]);
    let (tx, out) = w.send(0, 1, Coins::from_coins(5), (c(500), c(500)));
    assert_eq!(tx.change, Coins::from_coins(4));
    assert_eq!(tx.inputs, vec![w.genesis.transactions[0].tx.id()]);
    assert_eq!(tx.outputs_total(), TEN);
    assert_eq!(only_tx(&out).tx, tx);
}

#[test]
fn empty_wallet_is_refused() {
    let mut w = World::new(&[(0.0, 0.0), (0.1, 0.0)], params(0, 5, 5, 0.0), &[0]);
    let mut fx = Effects::new();
    let ring = w.ring.clone();
    let ctx = Ctx { now: w.now, ring: &ring };
    let err = w.nodes[1].send(ctx, UserId(0), Coins::from_coins(1), (Coins::ZERO, Coins::ZERO), &mut fx);
    assert_eq!(err.unwrap_err(), SendError::InsufficientFunds { available: Coins::ZERO, needed: Coins::from_coins(1) });
    assert!(fx.outbox.is_empty() && fx.events.is_empty());
}

#[test]
fn pending_funds_cannot_be_spent() {
    let mut w = World::new(&[(0.0, 0.0), (0.1, 0.0)], params(0, 5, 5, 0.0), &[0]);
    let (_, out) = w.send(0, 1, Coins::from_coins(5), (Coins::ZERO, Coins::ZERO));
    let fx = w.deliver(0, 1, out[0].clone());
    assert!(fx.outbox.iter().any(|m| matches!(m, Message::Ack(_))));
    let mut fx = Effects::new();
    let ring = w.ring.clone();
    let ctx = Ctx { now: w.now, ring: &ring };
    let r = w.nodes[1].send(ctx, UserId(0), Coins::from_coins(1), (Coins::ZERO, Coins::ZERO), &mut fx);
    assert!(matches!(r, Err(SendError::InsufficientFunds { .. })));
    assert!(fx.outbox.is_empty());
    // the sender's own remaining value is locked by the pending payment too
    let ctx = Ctx { now: w.now, ring: &ring };
    assert!(w.nodes[0].send(ctx, UserId(1), c(1), (Coins::ZERO, Coins::ZERO), &mut fx).is_err());
}

#[test]
fn stranger_relays_unchanged() {
    let mut w = World::new(&[(0.0, 0.0), (0.1, 0.0), (0.2, 0.0)], params(2, 5, 5, 0.0), &[0]);
    w.nodes[2].trusted_network.clear();
    let (tx, out) = w.send(0, 1, Coins::from_coins(5), (Coins::ZERO, Coins::ZERO));
    let fx = w.deliver(0, 2, out[0].clone());
    let env = only_tx(&fx.outbox);
    assert_eq!(env.tx, tx);
    assert!(env.co_attestations.is_empty());
    assert!(w.nodes[2].holds(&tx.id()));
}

#[test]
fn trusted_relay_co_attests() {
    let mut w = World::new(&[(0.0, 0.0), (0.1, 0.0), (0.2, 0.0)], params(2, 5, 5, 0.0), &[0]);
    let (tx, out) = w.send(0, 1, Coins::from_coins(5), (Coins::ZERO, Coins::ZERO));
    let fx = w.deliver(0, 2, out[0].clone());
    let env = only_tx(&fx.outbox);
    assert_eq!(env.co_attestations.len(), 1);
    assert_eq!(env.co_attestations[0].signer(), UserId(2));
    assert!(w.ring.verify_for(&env.co_attestations[0], UserId(2), &tx.id()));
}

#[test]
fn duplicate_without_news_is_silent() {
    let mut w = World::new(&[(0.0, 0.0), (0.1, 0.0), (0.2, 0.0)], params(2, 5, 5, 0.0), &[0]);
    let (_, out) = w.send(0, 1, Coins::from_coins(5), (Coins::ZERO, Coins::ZERO));
    w.deliver(0, 2, out[0].clone());
    let fx = w.deliver(0, 2, out[0].clone());
    assert!(fx.outbox.is_empty() && fx.events.is_empty());
}

#[test]
fn forged_attestation_is_dropped() {
    let mut w = World::new(&[(0.0, 0.0), (0.1, 0.0), (0.2, 0.0)], params(2, 5, 5, 0.0), &[0]);
    let (tx, out) = w.send(0, 1, Coins::from_coins(5), (Coins::ZERO, Coins::ZERO));
    let mut env = only_tx(&out);
    // user 2 signs, but over the wrong payload
    env.co_attestations.push(w.signers[2].attest(Digest::ZERO, w.now));
    let fx = w.deliver(0, 1, Message::Transaction(env));
    assert!(fx.outbox.is_empty());
    assert!(!w.nodes[1].holds(&tx.id()));
}

#[test]
fn receiver_acks_after_two_trusted_attestations() {
    let locs = [(0.0, 0.0), (0.1, 0.0), (0.2, 0.0), (0.3, 0.0)];
    let mut w = World::new(&locs, params(2, 5, 5, 0.0), &[0]);
    let (tx, out) = w.send(0, 1, Coins::from_coins(5), (c(600), Coins::ZERO));
    let via2 = only_tx(&w.deliver(0, 2, out[0].clone()).outbox);
    let via3 = only_tx(&w.deliver(0, 3, out[0].clone()).outbox);
    let fx = w.deliver(2, 1, Message::Transaction(via2));
    assert!(fx.outbox.iter().all(|m| !matches!(m, Message::Ack(_))));
    let rec = w.nodes[1].pending_record(&tx.id()).unwrap();
    assert_eq!((rec.first_notifier, rec.trusted_count()), (UserId(2), 1));
    let fx = w.deliver(3, 1, Message::Transaction(via3.clone()));
    let acks: Vec<&Ack> =
        fx.outbox.iter().filter_map(|m| if let Message::Ack(a) = m { Some(a) } else { None }).collect();
    assert_eq!(acks.len(), 1);
    assert_eq!(acks[0].fee_recipient, UserId(2));
    assert_eq!(acks[0].receiver, UserId(1));

    // a later attestation does not produce a second ack
    let mut extra = via3;
    extra.co_attestations.push(w.signers[0].attest(tx.id(), w.now));
    let fx = w.deliver(0, 1, Message::Transaction(extra));
    assert!(fx.outbox.iter().all(|m| !matches!(m, Message::Ack(_))));
    assert_eq!(w.events(EventKind::TxAcked).len(), 1);
}

#[test]
fn strict_threshold_needs_one_more() {
    let locs = [(0.0, 0.0), (0.1, 0.0), (0.2, 0.0), (0.3, 0.0)];
    let mut p = params(1, 5, 5, 0.0);
    p.strict_threshold = true;
    let mut w = World::new(&locs, p, &[0]);
    let (_, out) = w.send(0, 1, Coins::from_coins(5), (Coins::ZERO, Coins::ZERO));
    let via2 = only_tx(&w.deliver(0, 2, out[0].clone()).outbox);
    let via3 = only_tx(&w.deliver(0, 3, out[0].clone()).outbox);
    w.deliver(2, 1, Message::Transaction(via2));
    assert!(w.events(EventKind::TxAcked).is_empty());
    w.deliver(3, 1, Message::Transaction(via3));
    assert_eq!(w.events(EventKind::TxAcked).len(), 1);
}

#[test]
fn zero_threshold_acks_on_first_receipt() {
    let mut w = World::new(&[(0.0, 0.0), (0.1, 0.0)], params(0, 5, 5, 0.0), &[0]);
    let (tx, out) = w.send(0, 1, Coins::from_coins(5), (Coins::ZERO, Coins::ZERO));
    let fx = w.deliver(0, 1, out[0].clone());
    let ack = fx.outbox.iter().find_map(|m| if let Message::Ack(a) = m { Some(a.clone()) } else { None }).unwrap();
    assert_eq!((ack.tx, ack.fee_recipient), (tx.id(), UserId(0)));
}

#[test]
fn conflicting_payment_is_rejected_by_receiver() {
    let mut w = World::new(&[(0.0, 0.0), (0.1, 0.0)], params(0, 5, 5, 0.0), &[0]);
    let (first, out) = w.send(0, 1, Coins::from_coins(5), (Coins::ZERO, Coins::ZERO));
    w.deliver(0, 1, out[0].clone());
    w.now = w.now + SimTime(5);
    let mut body = first.body().clone();
    body.amount_to_receiver = Coins::from_coins(6);
    body.change = Coins::from_coins(4);
    body.timestamp = w.now;
    let second = body.sign(&w.signers[0]);
    let fx = w.deliver(0, 1, Message::Transaction(TxEnvelope::new(second.clone())));
    assert!(w.nodes[1].is_rejected(&second.id()));
    assert!(fx.outbox.iter().any(|m| matches!(m, Message::Alert(a) if a.first == first && a.second == second)));
    assert!(fx.outbox.iter().all(|m| !matches!(m, Message::Ack(_))));
}

/// Users 0..k each pay user `k` one coin; user `k+1` ends up holding every
/// transaction and ack. Returns the transactions.
fn acked_pairs(w: &mut World, k: usize) -> Vec<Transaction> {
    let (recv, holder) = (k, k + 1);
    let mut txs = Vec::new();
    for s in 0..k {
        w.now = w.now + SimTime(1);
        let (tx, out) = w.send(s, recv, Coins::from_coins(1), (Coins::ZERO, Coins::ZERO));
        let fx = w.deliver(s, recv, out[0].clone());
        w.deliver(s, holder, out[0].clone());
        for m in fx.outbox.into_iter().filter(|m| matches!(m, Message::Ack(_))) {
            w.deliver(recv, holder, m);
        }
        txs.push(tx);
    }
    txs
}

fn line(n: usize) -> Vec<(f64, f64)> {
    (0..n).map(|i| (i as f64 * 0.01, 0.0)).collect()
}

fn any_builder() -> NodeConfig {
    NodeConfig { builder_policy: BuilderPolicy::Any, ..Default::default() }
}

#[test]
fn five_pairs_make_one_proposal() {
    let funded: Vec<usize> = (0..5).collect();
    let mut w = World::with_config(&line(7), params(0, 5, 50, 0.0), &funded, any_builder());
    let txs = acked_pairs(&mut w, 5);
    let props: Vec<&BlockProposal> = w.nodes[6].proposals().collect();
    assert_eq!(props.len(), 1);
    let p = props[0];
    let ids: Vec<Digest> = p.transactions.iter().map(|t| t.tx.id()).collect();
    assert_eq!(ids, txs.iter().map(Transaction::id).collect::<Vec<_>>());
    assert_eq!(p.builder, UserId(6));
    assert_eq!(p.builder_location, w.nodes[6].location);
    assert!(p.per_tx_verifiers.iter().all(|v| v.len() == 1 && v[0].user == UserId(6)));
}

#[test]
fn four_pairs_make_none() {
    let funded: Vec<usize> = (0..4).collect();
    let mut w = World::with_config(&line(6), params(0, 5, 50, 0.0), &funded, any_builder());
    acked_pairs(&mut w, 4);
    assert_eq!(w.nodes[5].proposals().count(), 0);
    assert!(w.events(EventKind::ProposalBuilt).is_empty());
}

#[test]
fn unit_block_size_proposes_each_pair() {
    let funded: Vec<usize> = (0..3).collect();
    let mut w = World::with_config(&line(5), params(0, 1, 50, 0.0), &funded, any_builder());
    acked_pairs(&mut w, 3);
    assert_eq!(w.nodes[4].proposals().count(), 3);
}

#[test]
fn participants_policy_needs_a_role() {
    let funded: Vec<usize> = (0..5).collect();
    let mut w = World::new(&line(7), params(0, 5, 50, 0.0), &funded);
    acked_pairs(&mut w, 5);
    assert_eq!(w.nodes[6].proposals().count(), 0);
    // the receiver itself did build
    assert_eq!(w.nodes[5].proposals().count(), 1);
}

#[test]
fn verifier_signs_only_held_transactions() {
    let funded: Vec<usize> = (0..5).collect();
    let mut w = World::with_config(&line(8), params(0, 5, 50, 0.0), &funded, any_builder());
    let txs = acked_pairs(&mut w, 5);
    let prop = w.nodes[6].proposals().next().unwrap().clone();
    for tx in &txs[..3] {
        w.deliver(tx.sender.0 as usize, 7, Message::Transaction(TxEnvelope::new(tx.clone())));
    }
    let fx = w.deliver(6, 7, Message::Proposal(prop.clone()));
    let signed = fx.events.iter().find(|e| e.kind == EventKind::ProposalSigned).unwrap();
    assert_eq!(signed.aux, 3);
    let out = fx.outbox.iter().find_map(|m| if let Message::Proposal(p) = m { Some(p) } else { None }).unwrap();
    let mine: Vec<usize> = out.per_tx_verifiers.iter().map(|v| v.iter().filter(|e| e.user == UserId(7)).count()).collect();
    assert_eq!(mine, vec![1, 1, 1, 0, 0]);
    // distance vector tracks the new mean pairwise distance
    let expected = w.nodes[6].location.distance(&w.nodes[7].location);
    assert!((out.distance_vector[0] - expected).abs() < 1e-12);
    assert_eq!(out.distance_vector[4], 0.0);
}

#[test]
fn unknown_transactions_are_forwarded_unsigned() {
    let funded: Vec<usize> = (0..5).collect();
    let mut w = World::with_config(&line(8), params(0, 5, 50, 0.0), &funded, any_builder());
    acked_pairs(&mut w, 5);
    let prop = w.nodes[6].proposals().next().unwrap().clone();
    let fx = w.deliver(6, 7, Message::Proposal(prop.clone()));
    assert!(fx.events.iter().all(|e| e.kind != EventKind::ProposalSigned));
    assert!(matches!(&fx.outbox[..], [Message::Proposal(p)] if p.per_tx_verifiers == prop.per_tx_verifiers));
}

#[test]
fn distant_forwarder_is_flagged() {
    let funded: Vec<usize> = (0..5).collect();
    let mut locs = line(8);
    let mut p = params(0, 5, 50, 0.0);
    p.r_cov = 0.05;
    locs[7] = (locs[6].0 + 2.0 * p.r_cov, 0.0);
    let mut w = World::with_config(&locs, p, &funded, any_builder());
    acked_pairs(&mut w, 5);
    let prop = w.nodes[6].proposals().next().unwrap().clone();
    let fx = w.deliver(6, 7, Message::Proposal(prop));
    assert!(fx.events.iter().any(|e| e.kind == EventKind::EntryFlagged && e.aux == 6));
    let out = fx.outbox.iter().find_map(|m| if let Message::Proposal(p) = m { Some(p) } else { None }).unwrap();
    assert!(out.per_tx_verifiers.iter().all(|v| v.iter().all(|e| e.user != UserId(6) || e.flagged_false)));
}

#[test]
fn nearby_forwarder_is_not_flagged() {
    let funded: Vec<usize> = (0..5).collect();
    let mut p = params(0, 5, 50, 0.0);
    p.r_cov = 0.05;
    let mut w = World::with_config(&line(8), p, &funded, any_builder());
    acked_pairs(&mut w, 5);
    let prop = w.nodes[6].proposals().next().unwrap().clone();
    let fx = w.deliver(6, 7, Message::Proposal(prop));
    assert!(fx.events.iter().all(|e| e.kind != EventKind::EntryFlagged));
}

#[test]
fn conflicting_entry_is_disputed_and_alerted() {
    let funded: Vec<usize> = (0..5).collect();
    let mut w = World::with_config(&line(8), params(0, 5, 50, 0.0), &funded, any_builder());
    // node 7 first learns of an earlier payment by user 0 spending the same input
    let gid = w.genesis.transactions[0].tx.id();
    let early = TransactionBody {
        sender: UserId(0),
        receiver: UserId(7),
        inputs: vec![gid],
        amount_to_receiver: TEN,
        change: Coins::ZERO,
        tx_fee: Coins::ZERO,
        block_fee: Coins::ZERO,
        balance_note: TEN,
        timestamp: SimTime::ZERO + SimTime(1),
    }
    .sign(&w.signers[0]);
    w.deliver(0, 7, Message::Transaction(TxEnvelope::new(early.clone())));
    let txs = acked_pairs(&mut w, 5);
    let prop = w.nodes[6].proposals().next().unwrap().clone();
    let fx = w.deliver(6, 7, Message::Proposal(prop));
    let out = fx.outbox.iter().find_map(|m| if let Message::Proposal(p) = m { Some(p) } else { None }).unwrap();
    assert_eq!(out.disputed, vec![true, false, false, false, false]);
    assert!(fx.outbox.iter().any(|m| matches!(m, Message::Alert(a) if a.first == early && a.second == txs[0])));
    assert!(w.nodes[7].proposals().next().is_none());
}

/// Alice 0 pays Bob 1; Chris 2 and Eric 3 are Bob's trusted relays; David 4
/// builds. Spread out so the verifier spread clears aVd.
fn fig1() -> World {
    let locs = [(0.1, 0.1), (0.9, 0.1), (0.1, 0.9), (0.9, 0.9), (0.5, 0.5)];
    World::with_config(&locs, ProtocolParams { r_cov: 1.5, ..params(2, 1, 5, 0.3) }, &[0], any_builder())
}

#[test]
fn fig1_cast_creates_block() {
    let mut w = fig1();
    let (tx, out) = w.send(0, 1, Coins::from_coins(5), (c(600), c(1000)));
    w.flood(0, out, &[]);
    let created = w.events(EventKind::BlockCreated);
    assert!(!created.is_empty());
    for n in &w.nodes {
        let b = n.chain().block_of(&tx.id()).expect("verified everywhere");
        let block = n.chain().block(&b).unwrap();
        let users: BTreeSet<UserId> = block.verifiers[0].iter().map(|e| e.user).collect();
        assert_eq!(users, (0..5).map(UserId).collect());
        assert!(check_block_gate(block, &n.params, &w.ring).is_ok());
        assert!(n.tx(&tx.id()).is_none_or(|r| r.status == TxStatus::Verified));
    }
    assert_eq!(w.nodes[0].balance(), Coins::from_coins(10) - Coins::from_coins(5) - c(1600) + share_of(&w, 0, &tx));
}

#[test]
fn receiver_spend_keeps_sender_reservation() {
    let mut w = fig1();
    let (a, out) = w.send(0, 1, Coins::from_coins(5), (c(600), c(1000)));
    w.flood(0, out, &[]);
    assert!(w.nodes[0].chain().block_of(&a.id()).is_some());
    // Alice spends her change on `a` but the payment stays local
    w.now = w.now + SimTime(1);
    let (b, _) = w.send(0, 2, Coins::from_coins(1), (Coins::ZERO, Coins::ZERO));
    assert_eq!(b.inputs, vec![a.id()]);
    // Bob spends his own output on `a`, and Alice applies that block
    w.now = w.now + SimTime(1);
    let (bob, out) = w.send(1, 2, Coins::from_coins(1), (Coins::ZERO, Coins::ZERO));
    assert_eq!(bob.inputs, vec![a.id()]);
    w.flood(1, out, &[]);
    assert!(w.nodes[0].chain().block_of(&bob.id()).is_some());
    let mut fx = Effects::new();
    let ctx = Ctx { now: w.now, ring: &w.ring };
    assert!(w.nodes[0].send(ctx, UserId(2), Coins::from_coins(1), (Coins::ZERO, Coins::ZERO), &mut fx).is_err());
}

/// Oracle for one user's credit on `tx` after settlement.
fn share_of(w: &World, user: u64, tx: &Transaction) -> Coins {
    let n = &w.nodes[0];
    let block = n.chain().block(&n.chain().block_of(&tx.id()).unwrap()).unwrap();
    let sharers = &block.verifiers[0][..5];
    let rec = n.tx(&tx.id()).and_then(|r| r.ack.clone()).unwrap_or_else(|| block.transactions[0].ack.clone());
    let mut got = 0;
    if rec.fee_recipient == UserId(user) {
        got += tx.tx_fee.millis();
    }
    if sharers.iter().any(|e| e.user == UserId(user)) {
        got += tx.block_fee.millis() / 5;
    }
    Coins(got)
}

#[test]
fn fees_are_routed() {
    let mut w = fig1();
    let (tx, out) = w.send(0, 1, Coins::from_coins(5), (c(600), c(1000)));
    w.flood(0, out, &[]);
    let chain = w.nodes[3].chain();
    let block = chain.block(&chain.block_of(&tx.id()).unwrap()).unwrap();
    // Alice is in range of Bob, so she is the first notifier
    let fr = block.transactions[0].ack.fee_recipient;
    assert_eq!(fr, UserId(0));
    let mut expect: BTreeMap<UserId, u64> = BTreeMap::new();
    *expect.entry(UserId(1)).or_default() += 5000;
    *expect.entry(UserId(0)).or_default() += 3400;
    *expect.entry(fr).or_default() += 600;
    for e in &block.verifiers[0] {
        *expect.entry(e.user).or_default() += 200;
    }
    for u in 0..5 {
        let got = chain.credit(&tx.id(), UserId(u)).map_or(0, Coins::millis);
        assert_eq!(got, expect.get(&UserId(u)).copied().unwrap_or(0), "user {u}");
    }

    let before: Vec<Coins> = w.nodes.iter().map(NodeState::balance).collect();
    let b = block.clone();
    let ring = w.ring.clone();
    let mut fx = Effects::new();
    let ctx = Ctx { now: w.now, ring: &ring };
    assert_eq!(w.nodes[3].apply_block(ctx, b, &mut fx), Ok(false));
    assert!(fx.events.is_empty());
    let after: Vec<Coins> = w.nodes.iter().map(NodeState::balance).collect();
    assert_eq!(before, after);
}

#[test]
fn colocated_verifiers_make_no_block() {
    let locs = [(0.5, 0.5); 5];
    let mut w = World::with_config(&locs, ProtocolParams { r_cov: 1.5, ..params(2, 1, 5, 0.3) }, &[0], any_builder());
    let (tx, out) = w.send(0, 1, Coins::from_coins(5), (c(600), c(1000)));
    w.flood(0, out, &[]);
    assert!(w.events(EventKind::BlockCreated).is_empty());
    assert!(w.nodes.iter().all(|n| n.chain().block_of(&tx.id()).is_none()));
    // everyone signed, but the spread stays zero
    let p = w.nodes[4].proposals().next().unwrap();
    assert_eq!(p.per_tx_verifiers[0].len(), 5);
    assert_eq!(p.distance_vector[0], 0.0);
}

#[test]
fn flagged_entry_needs_a_replacement() {
    // builder 2 is far from 3 and 4, which sit next to each other
    let locs = [(0.0, 0.0), (0.01, 0.0), (0.9, 0.9), (0.1, 0.1), (0.11, 0.1)];
    let p = ProtocolParams { r_cov: 0.05, ..params(0, 1, 2, 0.0) };
    let mut w = World::with_config(&locs, p, &[0], any_builder());
    let (tx, out) = w.send(0, 1, Coins::from_coins(1), (Coins::ZERO, Coins::ZERO));
    let env = only_tx(&out);
    let ack = w
        .deliver(0, 1, Message::Transaction(env.clone()))
        .outbox
        .into_iter()
        .find(|m| matches!(m, Message::Ack(_)))
        .unwrap();
    for n in [3, 4] {
        w.deliver(0, n, Message::Transaction(env.clone()));
    }
    // builder 2 proposes alone
    w.nodes[2].config.builder_policy = BuilderPolicy::Any;
    w.nodes[2].params.m_vu = 50;
    w.deliver(0, 2, Message::Transaction(env));
    w.deliver(1, 2, ack);
    let prop = w.nodes[2].proposals().next().unwrap().clone();
    w.now = w.now + SimTime(1);

    let fx3 = w.deliver(2, 3, Message::Proposal(prop.clone()));
    assert!(fx3.events.iter().any(|e| e.kind == EventKind::EntryFlagged));
    assert!(fx3.events.iter().all(|e| e.kind != EventKind::BlockCreated));
    let fx4 = w.deliver(2, 4, Message::Proposal(prop));
    assert!(fx4.events.iter().all(|e| e.kind != EventKind::BlockCreated));
    let from4 = fx4.outbox.into_iter().find(|m| matches!(m, Message::Proposal(_))).unwrap();
    let fx = w.deliver(4, 3, from4);
    assert!(fx.events.iter().any(|e| e.kind == EventKind::BlockCreated));
    let b = w.nodes[3].chain().block_of(&tx.id()).unwrap();
    let block = w.nodes[3].chain().block(&b).unwrap();
    let users: Vec<UserId> = block.verifiers[0].iter().map(|e| e.user).collect();
    assert!(users.contains(&UserId(3)) && users.contains(&UserId(4)) && !users.contains(&UserId(2)));
}

#[test]
fn gate_rejects_short_blocks() {
    let mut w = fig1();
    let (tx, out) = w.send(0, 1, Coins::from_coins(5), (c(600), c(1000)));
    w.flood(0, out, &[]);
    let chain = w.nodes[0].chain();
    let good = chain.block(&chain.block_of(&tx.id()).unwrap()).unwrap().clone();
    let p = w.nodes[0].params;
    let mut short = good.clone();
    short.verifiers[0].truncate(4);
    assert_eq!(check_block_gate(&short, &p, &w.ring), Err(GateError::Verifiers(0)));
    let mut dup = good.clone();
    dup.verifiers[0][1] = dup.verifiers[0][0].clone();
    assert_eq!(check_block_gate(&dup, &p, &w.ring), Err(GateError::Entry(0)));
    let mut moved = good.clone();
    moved.verifiers[0][0].location = Location::new(0.0, 0.0);
    assert_eq!(check_block_gate(&moved, &p, &w.ring), Err(GateError::Entry(0)));
    let tight = ProtocolParams { avd: 1.2, ..p };
    assert_eq!(check_block_gate(&good, &tight, &w.ring), Err(GateError::Distance(0)));
    let wide = ProtocolParams { block_size: 2, ..p };
    assert_eq!(check_block_gate(&good, &wide, &w.ring), Err(GateError::Size(1)));
}

#[test]
fn sync_transfers() {
    let locs = [(0.1, 0.1), (0.9, 0.1), (0.1, 0.9), (0.9, 0.9), (0.5, 0.5), (0.5, 0.2)];
    let mut w = World::with_config(&locs, ProtocolParams { r_cov: 1.5, ..params(2, 1, 5, 0.3) }, &[0], any_builder());
    let (tx, out) = w.send(0, 1, Coins::from_coins(5), (c(600), c(1000)));
    w.flood(0, out, &[4]);
    assert!(w.nodes[0].chain().block_of(&tx.id()).is_some());
    assert!(w.nodes[4].chain().block_of(&tx.id()).is_none());
    let peer = w.nodes[0].clone();

    let later = w.now + SimTime(1);
    assert!(peer.sync_record(later).blocks.is_empty());
    let full: Vec<Digest> = peer.sync_record(SimTime::ZERO).blocks.iter().map(|b| b.id).collect();
    let mut held: Vec<Digest> = peer.chain().blocks().map(|b| b.id).collect();
    held.sort();
    let mut got = full.clone();
    got.sort();
    assert_eq!(got, held);
    assert!(full.contains(&w.genesis.id));

    let ring = w.ring.clone();
    let ctx = Ctx { now: w.now, ring: &ring };
    let mut fx = Effects::new();
    let since = w.nodes[4].last_update;
    let rec = sync(&mut w.nodes[4], &peer, since, ctx, &mut fx).unwrap();
    assert!(fx.events.iter().any(|e| e.kind == EventKind::Synced && e.aux == 1));
    assert_eq!(rec.blocks.len(), 2);
    let mine: BTreeSet<Digest> = w.nodes[4].chain().blocks().map(|b| b.id).collect();
    let theirs: BTreeSet<Digest> = peer.chain().blocks().map(|b| b.id).collect();
    assert_eq!(mine, theirs);
    assert_eq!(w.nodes[4].chain().balance(UserId(1)), peer.chain().balance(UserId(1)));

    w.nodes[4].trusted_network.remove(&UserId(0));
    assert_eq!(sync(&mut w.nodes[4], &peer, since, ctx, &mut fx).unwrap_err(), SyncError::Untrusted(UserId(0)));
}

#[test]
fn sender_rebroadcasts_until_acked() {
    let mut w = World::new(&[(0.0, 0.0), (0.1, 0.0)], params(0, 5, 5, 0.0), &[0]);
    let (tx, out) = w.send(0, 1, Coins::from_coins(5), (Coins::ZERO, Coins::ZERO));
    let ring = w.ring.clone();
    let mut fx = Effects::new();
    w.nodes[0].on_contact(Ctx { now: w.now, ring: &ring }, &mut fx);
    assert!(matches!(&fx.outbox[..], [Message::Transaction(e)] if e.tx == tx));
    let ack = w.deliver(0, 1, out[0].clone()).outbox.into_iter().find(|m| matches!(m, Message::Ack(_))).unwrap();
    w.deliver(1, 0, ack);
    let mut fx = Effects::new();
    w.nodes[0].on_contact(Ctx { now: w.now, ring: &ring }, &mut fx);
    assert!(fx.outbox.iter().all(|m| !matches!(m, Message::Transaction(_))));
}

#[test]
fn event_names_round_trip() {
    for k in EventKind::ALL {
        assert_eq!(EventKind::from_name(k.name()), Some(k));
    }
    assert_eq!(EventKind::from_name("nope"), None);
}

#[test]
fn verifier_entries_are_bound_to_location() {
    let ring_user = {
        let mut r = KeyRing::new(3);
        (r.issue(UserId(1)).unwrap(), r)
    };
    let (s, ring) = ring_user;
    let e = VerifierEntry::new(Digest::ZERO, Location::new(0.2, 0.3), &s, SimTime(5));
    assert!(ring.verify_for(&e.attestation, UserId(1), &VerifierEntry::signing_payload(Digest::ZERO, e.location)));
    assert!(!ring.verify_for(
        &e.attestation,
        UserId(1),
        &VerifierEntry::signing_payload(Digest::ZERO, Location::new(0.2, 0.31))
    ));
}
