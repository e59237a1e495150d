use std::collections::{HashSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::ids::{NodeId, TxId};
use crate::tx::Transaction;

/// A coordinator's FIFO buffers of cross-shard transactions.
///
/// Each direction remembers every id it has ever accepted, so a transaction
/// delivered along several gossip paths is queued once.
#[derive(Clone, Debug)]
pub struct CacheQueue {
    pub owner: NodeId,
    outbound: VecDeque<Transaction>,
    inbound: VecDeque<Transaction>,
    seen_out: HashSet<TxId>,
    seen_in: HashSet<TxId>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueueSnapshot {
    pub owner: NodeId,
    pub outbound: Vec<TxId>,
    pub inbound: Vec<TxId>,
}

impl CacheQueue {
    pub fn new(owner: NodeId) -> Self {
        CacheQueue {
            owner,
            outbound: VecDeque::new(),
            inbound: VecDeque::new(),
            seen_out: HashSet::new(),
            seen_in: HashSet::new(),
        }
    }

    /// Returns `false` for a transaction this queue has already accepted.
    pub fn push_outbound(&mut self, tx: Transaction) -> bool {
        if !self.seen_out.insert(tx.id) {
            return false;
        }
        self.outbound.push_back(tx);
        true
    }

    pub fn push_inbound(&mut self, tx: Transaction) -> bool {
        if !self.seen_in.insert(tx.id) {
            return false;
        }
        self.inbound.push_back(tx);
        true
    }

    pub fn drain_outbound(&mut self, limit: usize) -> Vec<Transaction> {
        let k = limit.min(self.outbound.len());
        self.outbound.drain(..k).collect()
    }

    pub fn drain_inbound(&mut self, limit: usize) -> Vec<Transaction> {
        let k = limit.min(self.inbound.len());
        self.inbound.drain(..k).collect()
    }

    pub fn outbound(&self) -> impl Iterator<Item = &Transaction> {
        self.outbound.iter()
    }

    pub fn inbound(&self) -> impl Iterator<Item = &Transaction> {
        self.inbound.iter()
    }

    pub fn outbound_len(&self) -> usize {
        self.outbound.len()
    }

    pub fn inbound_len(&self) -> usize {
        self.inbound.len()
    }

    pub fn has_seen_outbound(&self, id: TxId) -> bool {
        self.seen_out.contains(&id)
    }

    pub fn has_seen_inbound(&self, id: TxId) -> bool {
        self.seen_in.contains(&id)
    }

    pub fn snapshot(&self) -> QueueSnapshot {
        QueueSnapshot {
            owner: self.owner,
            outbound: self.outbound.iter().map(|t| t.id).collect(),
            inbound: self.inbound.iter().map(|t| t.id).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ids::CommitteeId;

    fn tx(i: u64) -> Transaction {
        Transaction::transfer(TxId(i), CommitteeId(0), CommitteeId(1), 0)
    }

    #[test]
    fn fifo_with_limit() {
        let mut q = CacheQueue::new(NodeId(0));
        for i in 0..5 {
            assert!(q.push_outbound(tx(i)));
        }
        let first: Vec<u64> = q.drain_outbound(2).iter().map(|t| t.id.0).collect();
        assert_eq!(first, vec![0, 1]);
        assert_eq!(q.outbound_len(), 3);
        let rest: Vec<u64> = q.drain_outbound(10).iter().map(|t| t.id.0).collect();
        assert_eq!(rest, vec![2, 3, 4]);
    }

    #[test]
    fn duplicates_rejected_even_after_drain() {
        let mut q = CacheQueue::new(NodeId(0));
        assert!(q.push_inbound(tx(1)));
        assert!(!q.push_inbound(tx(1)));
        q.drain_inbound(1);
        assert!(!q.push_inbound(tx(1)));
        assert_eq!(q.inbound_len(), 0);
    }
}
