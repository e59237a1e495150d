use serde::{Deserialize, Serialize};

use crate::ids::{CommitteeId, NodeId, Tick, TxId};

/// What a transaction asks the network to do.
///
/// Everything except `Transfer` is a reconfiguration request whose consensus
/// timestamp later serves as a random draw.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TxKind {
    Transfer,
    /// Global: place `node` into a committee.
    Join { node: NodeId },
    /// Global: pick donor committees for a depleted committee.
    Reorg { depleted: CommitteeId },
    /// Local to the donor: pick `count` members to hand to `depleted`.
    Split { depleted: CommitteeId, count: u32 },
    /// Local: pick a new coordinator.
    Reselect,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transaction {
    pub id: TxId,
    pub origin: CommitteeId,
    pub target: CommitteeId,
    pub size_units: u32,
    pub kind: TxKind,
    /// Injection tick, kept for latency accounting. Not part of the event hash.
    pub injected_at: Tick,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TxClass {
    Intra,
    Cross,
}

impl Transaction {
    pub fn transfer(id: TxId, origin: CommitteeId, target: CommitteeId, injected_at: Tick) -> Self {
        Transaction {
            id,
            origin,
            target,
            size_units: 1,
            kind: TxKind::Transfer,
            injected_at,
        }
    }

    pub fn control(id: TxId, committee: CommitteeId, kind: TxKind, injected_at: Tick) -> Self {
        Transaction {
            id,
            origin: committee,
            target: committee,
            size_units: 1,
            kind,
            injected_at,
        }
    }

    pub fn is_cross(&self) -> bool {
        self.origin != self.target
    }

    /// A cross-shard transfer: the only kind routed through the cache queues.
    pub fn is_cross_transfer(&self) -> bool {
        self.kind == TxKind::Transfer && self.is_cross()
    }
}

/// Intra iff origin and target committee coincide.
pub fn classify_transaction(tx: &Transaction) -> TxClass {
    if tx.is_cross() {
        TxClass::Cross
    } else {
        TxClass::Intra
    }
}
