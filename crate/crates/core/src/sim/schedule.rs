use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::ids::{CommitteeId, NodeId, Tick};
use crate::sharding::Delivery;

#[derive(Clone, Debug)]
pub enum SimEventKind {
    GossipInitiate(NodeId),
    TxInject,
    Consensus,
    Checkpoint,
    /// A fresh node asks to join.
    Join,
    Leave(NodeId),
    FailShard(CommitteeId),
    RecoverShard(CommitteeId),
    AdversaryAct,
    /// A delayed sync reaching its receiver.
    Deliver(NodeId, CommitteeId, Box<Delivery>),
}

impl SimEventKind {
    pub fn label(&self) -> &'static str {
        match self {
            SimEventKind::GossipInitiate(_) => "gossip_initiate",
            SimEventKind::TxInject => "tx_inject",
            SimEventKind::Consensus => "consensus",
            SimEventKind::Checkpoint => "checkpoint",
            SimEventKind::Join => "join",
            SimEventKind::Leave(_) => "leave",
            SimEventKind::FailShard(_) => "fail_shard",
            SimEventKind::RecoverShard(_) => "recover_shard",
            SimEventKind::AdversaryAct => "adversary_act",
            SimEventKind::Deliver(..) => "deliver",
        }
    }
}

#[derive(Clone, Debug)]
pub struct SimEvent {
    pub at: Tick,
    pub seq: u64,
    pub kind: SimEventKind,
}

impl PartialEq for SimEvent {
    fn eq(&self, other: &Self) -> bool {
        (self.at, self.seq) == (other.at, other.seq)
    }
}

impl Eq for SimEvent {}

impl PartialOrd for SimEvent {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for SimEvent {
    // Reversed so the max-heap pops the earliest (at, seq) first.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.at, other.seq).cmp(&(self.at, self.seq))
    }
}

/// Pending events, popped in (tick, insertion sequence) order.
#[derive(Debug, Default)]
pub struct Schedule {
    heap: BinaryHeap<SimEvent>,
    next_seq: u64,
}

impl Schedule {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, at: Tick, kind: SimEventKind) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(SimEvent { at, seq, kind });
    }

    pub fn pop(&mut self) -> Option<SimEvent> {
        self.heap.pop()
    }

    pub fn peek_at(&self) -> Option<Tick> {
        self.heap.peek().map(|e| e.at)
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ties_break_by_insertion() {
        let mut s = Schedule::new();
        s.push(5, SimEventKind::Leave(NodeId(1)));
        s.push(3, SimEventKind::TxInject);
        s.push(5, SimEventKind::Leave(NodeId(2)));
        s.push(3, SimEventKind::Consensus);
        let order: Vec<(Tick, &str)> = std::iter::from_fn(|| s.pop()).map(|e| (e.at, e.kind.label())).collect();
        assert_eq!(order, vec![(3, "tx_inject"), (3, "consensus"), (5, "leave"), (5, "leave")]);
    }
}
