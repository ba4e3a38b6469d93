//! Distributed-blockchain bookkeeping: parent pointers, garbage collection
//! and throughput accounting.
//!
//! A transaction credits up to four kinds of outputs (receiver amount, change,
//! transaction fee, block-fee shares); each (transaction, owner) output is
//! spent once. A transaction is live while any of its outputs is unspent, and
//! every live transaction keeps one pointer per input to the block holding
//! that input. A block is collectable once none of its transactions is live
//! and no live transaction points at it; the newest block is always kept.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use crate::message::{Block, Transaction, TxPair, VerifierEntry};
use crate::types::{Coins, Digest, SimTime, UserId};

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum ChainError {
    #[error("block size must be at least 1")]
    ZeroBlockSize,
    #[error("expected {expected} per-transaction input counts, got {got}")]
    InputCountLength { expected: usize, got: usize },
}

/// Long-run block creation rate for `tx_pair_rate` (Λ) pairs per unit time.
pub fn expected_block_rate(tx_pair_rate: f64, block_size: u32) -> Result<f64, ChainError> {
    if block_size == 0 {
        return Err(ChainError::ZeroBlockSize);
    }
    Ok(tx_pair_rate / block_size as f64)
}

/// Pointers to past blocks dropped when a block spending these inputs lands.
pub fn links_deleted_per_block(input_counts: &[u32], block_size: u32) -> Result<u64, ChainError> {
    if input_counts.len() != block_size as usize {
        return Err(ChainError::InputCountLength { expected: block_size as usize, got: input_counts.len() });
    }
    Ok(input_counts.iter().map(|&c| c as u64).sum())
}

/// Who is credited what by a verified pair. Block fees are split equally
/// among the fee-sharing verifiers, the remainder going to the first; with no
/// verifiers the block fee returns to the sender.
pub fn output_credits(pair: &TxPair, sharers: &[VerifierEntry]) -> BTreeMap<UserId, Coins> {
    let tx = &pair.tx;
    let mut out: BTreeMap<UserId, Coins> = BTreeMap::new();
    *out.entry(tx.receiver).or_default() += tx.amount_to_receiver;
    *out.entry(tx.sender).or_default() += tx.change;
    *out.entry(pair.ack.fee_recipient).or_default() += tx.tx_fee;
    if sharers.is_empty() {
        *out.entry(tx.sender).or_default() += tx.block_fee;
    } else {
        let k = sharers.len() as u64;
        let share = tx.block_fee.millis() / k;
        let rest = tx.block_fee.millis() - share * k;
        for (i, v) in sharers.iter().enumerate() {
            let extra = if i == 0 { rest } else { 0 };
            *out.entry(v.user).or_default() += Coins(share + extra);
        }
    }
    out.retain(|_, c| *c > Coins::ZERO);
    out
}

/// What one insertion changed.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct GcReport {
    /// Outputs newly marked spent.
    pub consumed: Vec<(Digest, UserId)>,
    /// Parent pointers removed from spent transactions.
    pub pointers_removed: u64,
    /// Blocks deleted as orphans.
    pub deleted_blocks: Vec<Digest>,
}

#[derive(Clone, Debug, Default)]
pub struct ChainView {
    m_vu: u32,
    blocks: BTreeMap<Digest, Block>,
    /// Unspent transactions per block.
    live: BTreeMap<Digest, u32>,
    /// Blocks in (created_at, digest) order; each points at its predecessor.
    order: Vec<(SimTime, Digest)>,
    /// Transaction digest -> (block, position).
    tx_index: BTreeMap<Digest, (Digest, usize)>,
    /// Unspent credits per stored transaction.
    unspent: BTreeMap<Digest, BTreeMap<UserId, Coins>>,
    /// Every output ever spent, including ones whose block is not stored.
    spent: BTreeSet<(Digest, UserId)>,
    /// Transactions removed with their blocks, with the removal time.
    deletions: Vec<(SimTime, Digest)>,
}

impl ChainView {
    /// `m_vu` fixes how many verifiers share each block fee.
    pub fn new(m_vu: u32) -> Self {
        ChainView { m_vu, ..Self::default() }
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn contains(&self, id: &Digest) -> bool {
        self.blocks.contains_key(id)
    }

    pub fn block(&self, id: &Digest) -> Option<&Block> {
        self.blocks.get(id)
    }

    pub fn blocks(&self) -> impl Iterator<Item = &Block> {
        self.order.iter().map(move |(_, d)| &self.blocks[d])
    }

    pub fn head(&self) -> Option<Digest> {
        self.order.last().map(|(_, d)| *d)
    }

    pub fn predecessor(&self, id: &Digest) -> Option<Digest> {
        let i = self.order.iter().position(|(_, d)| d == id)?;
        i.checked_sub(1).map(|j| self.order[j].1)
    }

    pub fn child_count(&self, id: &Digest) -> Option<u32> {
        self.blocks.get(id).map(|b| b.child_pointer_count)
    }

    pub fn live_count(&self, id: &Digest) -> Option<u32> {
        self.live.get(id).copied()
    }

    /// Verified transaction by digest, if its block is still stored.
    pub fn transaction(&self, tx: &Digest) -> Option<&Transaction> {
        let (b, i) = self.tx_index.get(tx)?;
        Some(&self.blocks[b].transactions[*i].tx)
    }

    pub fn block_of(&self, tx: &Digest) -> Option<Digest> {
        self.tx_index.get(tx).map(|(b, _)| *b)
    }

    /// Whether every output of a stored transaction is spent.
    pub fn is_consumed(&self, tx: &Digest) -> bool {
        self.tx_index.contains_key(tx) && self.unspent.get(tx).map_or(true, BTreeMap::is_empty)
    }

    pub fn is_spent(&self, tx: &Digest, owner: UserId) -> bool {
        self.spent.contains(&(*tx, owner))
    }

    /// Unspent credit `owner` holds on a stored transaction.
    pub fn credit(&self, tx: &Digest, owner: UserId) -> Option<Coins> {
        self.unspent.get(tx)?.get(&owner).copied()
    }

    /// Unspent outputs of `owner`, oldest block first.
    pub fn unspent_outputs(&self, owner: UserId) -> Vec<(Digest, Coins)> {
        let mut out = Vec::new();
        for (_, bid) in &self.order {
            for p in &self.blocks[bid].transactions {
                let d = p.tx.id();
                if self.tx_index.get(&d).map(|(b, _)| b) != Some(bid) {
                    continue;
                }
                if let Some(c) = self.credit(&d, owner) {
                    out.push((d, c));
                }
            }
        }
        out
    }

    pub fn balance(&self, owner: UserId) -> Coins {
        self.unspent.values().filter_map(|m| m.get(&owner)).copied().sum()
    }

    /// Sum of all unspent credits.
    pub fn total_unspent(&self) -> Coins {
        self.unspent.values().flat_map(|m| m.values()).copied().sum()
    }

    pub fn deletions_since(&self, since: SimTime) -> impl Iterator<Item = Digest> + '_ {
        self.deletions.iter().filter(move |(t, _)| *t >= since).map(|(_, d)| *d)
    }

    pub fn blocks_since(&self, since: SimTime) -> impl Iterator<Item = &Block> {
        self.blocks().filter(move |b| b.created_at >= since)
    }

    /// Stores `block`, linking each transaction to the blocks of its inputs
    /// and spending those inputs. Returns `None` if the block is already known.
    pub fn insert(&mut self, mut block: Block, now: SimTime) -> Option<GcReport> {
        if self.blocks.contains_key(&block.id) {
            return None;
        }
        let mut report = GcReport::default();
        block.parent_pointers = block
            .transactions
            .iter()
            .map(|p| p.tx.inputs.iter().filter_map(|d| self.block_of(d)).collect())
            .collect();
        block.child_pointer_count = 0;
        let id = block.id;
        let mut live = 0;
        let mut dead = Vec::new();
        for (i, p) in block.transactions.iter().enumerate() {
            let d = p.tx.id();
            if self.tx_index.contains_key(&d) {
                // already verified elsewhere; this copy adds nothing
                dead.push(i);
                continue;
            }
            self.tx_index.insert(d, (id, i));
            let mut credits = output_credits(p, block.fee_sharers(i, self.m_vu));
            credits.retain(|owner, _| !self.spent.contains(&(d, *owner)));
            if credits.is_empty() {
                dead.push(i);
            } else {
                live += 1;
            }
            self.unspent.insert(d, credits);
        }
        for i in dead {
            block.parent_pointers[i].clear();
        }
        for parents in &block.parent_pointers {
            for parent in parents {
                if let Some(b) = self.blocks.get_mut(parent) {
                    b.child_pointer_count += 1;
                }
            }
        }
        let inputs: Vec<(Digest, UserId)> = block
            .transactions
            .iter()
            .flat_map(|p| p.tx.inputs.iter().map(move |d| (*d, p.tx.sender)))
            .collect();
        let key = (block.created_at, id);
        let pos = self.order.partition_point(|k| *k < key);
        self.order.insert(pos, key);
        self.blocks.insert(id, block);
        self.live.insert(id, live);
        for (input, owner) in inputs {
            self.spend(input, owner, &mut report);
        }
        report.deleted_blocks = self.collect_garbage(now);
        Some(report)
    }

    fn spend(&mut self, tx: Digest, owner: UserId, report: &mut GcReport) {
        if !self.spent.insert((tx, owner)) {
            return;
        }
        report.consumed.push((tx, owner));
        let Some(&(bid, i)) = self.tx_index.get(&tx) else { return };
        let Some(credits) = self.unspent.get_mut(&tx) else { return };
        if credits.remove(&owner).is_none() || !credits.is_empty() {
            return;
        }
        self.retire(bid, i, report);
    }

    /// Drops the parent pointers of a transaction with no unspent outputs left.
    fn retire(&mut self, bid: Digest, i: usize, report: &mut GcReport) {
        if let Some(l) = self.live.get_mut(&bid) {
            *l = l.saturating_sub(1);
        }
        let parents = core::mem::take(&mut self.blocks.get_mut(&bid).expect("indexed block").parent_pointers[i]);
        for parent in parents {
            report.pointers_removed += 1;
            if let Some(b) = self.blocks.get_mut(&parent) {
                b.child_pointer_count = b.child_pointer_count.saturating_sub(1);
            }
        }
    }

    /// Adopts another copy of a stored block if it sorts before the stored
    /// one by (created_at, verifier digest), recomputing the unspent credits
    /// of its transactions. Nodes that created the same block from different
    /// views of its proposal thereby converge on one fee split. Returns
    /// `None` when the stored copy is kept.
    pub fn reconcile(&mut self, copy: &Block, now: SimTime) -> Option<GcReport> {
        let held = self.blocks.get(&copy.id)?;
        if (copy.created_at, copy.verifier_digest()) >= (held.created_at, held.verifier_digest()) {
            return None;
        }
        let id = copy.id;
        let old_key = (held.created_at, id);
        self.order.retain(|k| *k != old_key);
        let key = (copy.created_at, id);
        let pos = self.order.partition_point(|k| *k < key);
        self.order.insert(pos, key);
        let block = self.blocks.get_mut(&id).expect("held");
        block.created_at = copy.created_at;
        block.verifiers = copy.verifiers.clone();
        let mut dead = Vec::new();
        for (i, p) in block.transactions.iter().enumerate() {
            let d = p.tx.id();
            if self.tx_index.get(&d) != Some(&(id, i)) || self.unspent.get(&d).map_or(true, BTreeMap::is_empty) {
                continue;
            }
            let mut credits = output_credits(p, block.fee_sharers(i, self.m_vu));
            credits.retain(|owner, _| !self.spent.contains(&(d, *owner)));
            if credits.is_empty() {
                dead.push(i);
            }
            self.unspent.insert(d, credits);
        }
        let mut report = GcReport::default();
        for i in dead {
            self.retire(id, i, &mut report);
        }
        report.deleted_blocks = self.collect_garbage(now);
        Some(report)
    }

    /// Blocks with no live transactions and no child pointers, except the head.
    pub fn orphan_candidates(&self) -> BTreeSet<Digest> {
        let head = self.head();
        self.blocks
            .values()
            .filter(|b| Some(b.id) != head && b.child_pointer_count == 0 && self.live.get(&b.id) == Some(&0))
            .map(|b| b.id)
            .collect()
    }

    /// Deletes every orphan and relinks the order around it.
    pub fn collect_garbage(&mut self, now: SimTime) -> Vec<Digest> {
        let orphans = self.orphan_candidates();
        for id in &orphans {
            let block = self.blocks.remove(id).expect("candidate exists");
            self.live.remove(id);
            self.order.retain(|(_, d)| d != id);
            for p in &block.transactions {
                let d = p.tx.id();
                if self.tx_index.get(&d).map(|(b, _)| b) == Some(id) {
                    self.tx_index.remove(&d);
                    self.unspent.remove(&d);
                    self.deletions.push((now, d));
                }
            }
        }
        orphans.into_iter().collect()
    }

    /// Child and live counts recomputed from the stored pointers alone.
    pub fn recount(&self) -> BTreeMap<Digest, (u32, u32)> {
        let mut out: BTreeMap<Digest, (u32, u32)> = self.blocks.keys().map(|k| (*k, (0, 0))).collect();
        for b in self.blocks.values() {
            for parents in &b.parent_pointers {
                for parent in parents {
                    if let Some(c) = out.get_mut(parent) {
                        c.0 += 1;
                    }
                }
            }
        }
        for (tx, (bid, _)) in &self.tx_index {
            if !self.is_consumed(tx) {
                out.get_mut(bid).expect("indexed block").1 += 1;
            }
        }
        out
    }

    /// Incremental counts in the same shape as [`ChainView::recount`].
    pub fn counts(&self) -> BTreeMap<Digest, (u32, u32)> {
        self.blocks.values().map(|b| (b.id, (b.child_pointer_count, self.live[&b.id]))).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attest::{KeyRing, Signer};
    use crate::message::{Ack, TransactionBody, TxPair};
    use crate::types::{Coins, Location, UserId};
    use alloc::vec;

    struct Fixture {
        signer: Signer,
        n: u64,
    }

    impl Fixture {
        fn new() -> Self {
            let mut ring = KeyRing::new(3);
            Fixture { signer: ring.issue(UserId(1)).unwrap(), n: 0 }
        }

        fn tx(&mut self, inputs: Vec<Digest>) -> TxPair {
            self.n += 1;
            let tx = TransactionBody {
                sender: UserId(1),
                receiver: UserId(1),
                inputs,
                amount_to_receiver: Coins(1),
                change: Coins(0),
                tx_fee: Coins(0),
                block_fee: Coins(0),
                balance_note: Coins(0),
                timestamp: SimTime(self.n),
            }
            .sign(&self.signer);
            let ack = Ack::new(tx.id(), UserId(3), &self.signer, SimTime(self.n));
            TxPair { tx, ack }
        }

        fn block(&mut self, txs: Vec<TxPair>, at: u64) -> Block {
            Block {
                id: Block::compute_id(&txs),
                verifiers: vec![Vec::new(); txs.len()],
                parent_pointers: Vec::new(),
                child_pointer_count: 0,
                transactions: txs,
                created_at: SimTime(at),
            }
        }
    }

    #[test]
    fn block_rate() {
        assert_eq!(expected_block_rate(10.0, 5), Ok(2.0));
        assert_eq!(expected_block_rate(0.0, 5), Ok(0.0));
        assert_eq!(expected_block_rate(1.0, 0), Err(ChainError::ZeroBlockSize));
    }

    #[test]
    fn links_sum() {
        assert_eq!(links_deleted_per_block(&[1, 1, 1, 1, 1], 5), Ok(5));
        assert_eq!(links_deleted_per_block(&[2, 3], 2), Ok(5));
        assert!(links_deleted_per_block(&[2, 3], 3).is_err());
    }

    #[test]
    fn fresh_block_with_live_transactions_is_kept() {
        let mut f = Fixture::new();
        let mut view = ChainView::new(5);
        let g = f.tx(vec![]);
        let gid = g.tx.id();
        view.insert(f.block(vec![g], 0), SimTime(0));
        let child = f.tx(vec![gid]);
        let b1 = f.block(vec![child], 1);
        let b1id = b1.id;
        view.insert(b1, SimTime(1));
        // genesis is spent but b1's transaction still points at it
        assert!(view.orphan_candidates().is_empty());
        assert_eq!(view.len(), 2);
        assert_eq!(view.child_count(&view.block_of(&gid).unwrap()), Some(1));
        assert_eq!(view.head(), Some(b1id));
    }

    #[test]
    fn fully_consumed_block_is_collected() {
        let mut f = Fixture::new();
        let mut view = ChainView::new(5);
        let g = f.tx(vec![]);
        let gid = g.tx.id();
        let gb = f.block(vec![g], 0);
        let gbid = gb.id;
        view.insert(gb, SimTime(0));
        let a = f.tx(vec![gid]);
        let aid = a.tx.id();
        view.insert(f.block(vec![a], 1), SimTime(1));
        let b = f.tx(vec![aid]);
        let report = view.insert(f.block(vec![b], 2), SimTime(2)).unwrap();
        // spending `a` drops its pointer to the genesis block, which is now empty
        assert_eq!(report.pointers_removed, 1);
        assert_eq!(report.deleted_blocks, vec![gbid]);
        assert!(!view.contains(&gbid));
        assert_eq!(view.deletions_since(SimTime(0)).collect::<Vec<_>>(), vec![gid]);
        assert!(view.is_spent(&gid, UserId(1)));
    }

    #[test]
    fn copies_with_different_verifiers_converge() {
        let mut ring = KeyRing::new(9);
        let sender = ring.issue(UserId(1)).unwrap();
        let vs: Vec<Signer> = (5..9).map(|u| ring.issue(UserId(u)).unwrap()).collect();
        let tx = TransactionBody {
            sender: UserId(1),
            receiver: UserId(2),
            inputs: vec![],
            amount_to_receiver: Coins(100),
            change: Coins(0),
            tx_fee: Coins(0),
            block_fee: Coins(6),
            balance_note: Coins(0),
            timestamp: SimTime(1),
        }
        .sign(&sender);
        let d = tx.id();
        let ack = Ack::new(d, UserId(2), &sender, SimTime(1));
        let pair = TxPair { tx, ack };
        let copy = |who: [usize; 3]| Block {
            id: Block::compute_id(core::slice::from_ref(&pair)),
            transactions: vec![pair.clone()],
            verifiers: vec![who.iter().map(|&k| VerifierEntry::new(d, Location::new(0.0, 0.0), &vs[k], SimTime(2))).collect()],
            parent_pointers: Vec::new(),
            child_pointer_count: 0,
            created_at: SimTime(3),
        };
        let (a, b) = (copy([0, 1, 2]), copy([0, 1, 3]));
        let (first, second) = if a.verifier_digest() < b.verifier_digest() { (a, b) } else { (b, a) };

        let mut x = ChainView::new(3);
        x.insert(first.clone(), SimTime(3));
        assert!(x.reconcile(&second, SimTime(4)).is_none());
        let mut y = ChainView::new(3);
        y.insert(second.clone(), SimTime(3));
        assert!(y.reconcile(&first, SimTime(4)).is_some());
        assert!(y.reconcile(&first, SimTime(4)).is_none());

        for u in 1..9 {
            assert_eq!(x.credit(&d, UserId(u)), y.credit(&d, UserId(u)), "user {u}");
        }
        assert_eq!(x.block(&first.id).unwrap().verifiers, first.verifiers);
        assert_eq!(y.block(&first.id).unwrap().verifiers, first.verifiers);
        assert_eq!(y.total_unspent(), Coins(106));
    }

    #[test]
    fn one_of_nine_consumed_keeps_block() {
        let mut f = Fixture::new();
        let mut view = ChainView::new(5);
        let g = f.tx(vec![]);
        let gid = g.tx.id();
        view.insert(f.block(vec![g], 0), SimTime(0));
        // nine transactions, each pointing at the genesis block
        let gen2: Vec<TxPair> = (0..9).map(|_| f.tx(vec![])).collect();
        let gen2_ids: Vec<Digest> = gen2.iter().map(|p| p.tx.id()).collect();
        view.insert(f.block(gen2, 1), SimTime(1));
        let nine: Vec<TxPair> = gen2_ids.iter().map(|d| f.tx(vec![gid, *d])).collect();
        let nine_ids: Vec<Digest> = nine.iter().map(|p| p.tx.id()).collect();
        let nb = f.block(nine, 2);
        let nbid = nb.id;
        view.insert(nb, SimTime(2));
        let spend = f.tx(vec![nine_ids[4]]);
        let report = view.insert(f.block(vec![spend], 3), SimTime(3)).unwrap();
        // the spent transaction's two parent links are gone
        assert_eq!(report.pointers_removed, 2);
        assert!(view.contains(&nbid));
        assert_eq!(view.live_count(&nbid), Some(8));
        assert_eq!(view.block(&nbid).unwrap().parent_pointers[4], Vec::<Digest>::new());
        assert_eq!(view.block(&nbid).unwrap().parent_pointers[3].len(), 2);
    }

    #[test]
    fn orphan_in_middle_is_relinked() {
        let mut f = Fixture::new();
        let mut view = ChainView::new(5);
        let a0 = f.tx(vec![]);
        let a1 = f.tx(vec![]);
        let a1id = a1.tx.id();
        let a = f.block(vec![a0, a1], 0);
        let aid = a.id;
        view.insert(a, SimTime(0));
        let bt = f.tx(vec![]);
        let btid = bt.tx.id();
        let b = f.block(vec![bt], 1);
        let bid = b.id;
        view.insert(b, SimTime(1));
        let ct = f.tx(vec![btid]);
        let ctid = ct.tx.id();
        let c = f.block(vec![ct], 2);
        let cid = c.id;
        view.insert(c, SimTime(2));
        assert_eq!(view.predecessor(&cid), Some(bid));
        // spending c's transaction releases b; a still has live transactions
        let dt = f.tx(vec![ctid, a1id]);
        view.insert(f.block(vec![dt], 3), SimTime(3));
        assert!(!view.contains(&bid));
        assert_eq!(view.predecessor(&cid), Some(aid));
    }

    #[test]
    fn head_is_never_collected() {
        let mut f = Fixture::new();
        let mut view = ChainView::new(5);
        let g = f.tx(vec![]);
        let gid = g.tx.id();
        view.insert(f.block(vec![g], 0), SimTime(0));
        let spend = f.tx(vec![gid]);
        let sid = spend.tx.id();
        view.insert(f.block(vec![spend], 1), SimTime(1));
        let mut last = f.block(vec![], 2);
        last.id = Digest::of(b"empty head");
        view.insert(last, SimTime(2));
        // consume the only live transaction of the middle block via a late block
        let fin = f.tx(vec![sid]);
        let mut fb = f.block(vec![fin], 3);
        fb.created_at = SimTime(1);
        view.insert(fb, SimTime(3));
        assert!(!view.orphan_candidates().contains(&view.head().unwrap()));
    }

    #[test]
    fn incremental_counts_match_recount() {
        let mut f = Fixture::new();
        let mut view = ChainView::new(5);
        let mut unspent: Vec<Digest> = Vec::new();
        for round in 0..30u64 {
            let mut txs = Vec::new();
            for k in 0..3 {
                let inputs = if unspent.len() > k && round % 2 == 1 {
                    vec![unspent.remove(0)]
                } else {
                    vec![]
                };
                txs.push(f.tx(inputs));
            }
            unspent.extend(txs.iter().map(|p| p.tx.id()));
            view.insert(f.block(txs, round), SimTime(round));
            assert_eq!(view.counts(), view.recount());
        }
    }
}
