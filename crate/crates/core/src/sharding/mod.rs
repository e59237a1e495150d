//! Committees, cross-shard queues, per-committee ledgers and replicas.

mod committee;
mod ledger;
mod queue;
mod state;

pub use committee::{partition_nodes, CommitteeTable};
pub use ledger::{CommitteeLedger, LedgerEntry};
pub use queue::{CacheQueue, QueueSnapshot};
pub use state::{
    is_control, Delivery, OrderedTx, Pool, RecoveryReport, RemoveOutcome, Replica, Scope, ShardState, SyncReport,
};

pub use crate::tx::classify_transaction;

use crate::hashgraph::{EventId, HashgraphError};
use crate::ids::{CommitteeId, NodeId};

#[derive(Debug, thiserror::Error)]
pub enum ShardingError {
    #[error("at least one shard is required")]
    NoShards,
    #[error("{nodes} nodes cannot fill {shards} committees")]
    TooFewNodes { nodes: usize, shards: u32 },
    #[error("{0} is not a member of any committee")]
    NotAMember(NodeId),
    #[error("{0} is already a member of a committee")]
    AlreadyMember(NodeId),
    #[error("{0} is not a coordinator")]
    NotCoordinator(NodeId),
    #[error("committee {0} has no coordinator")]
    NoCoordinator(CommitteeId),
    #[error("{0} holds no graph view")]
    NoView(NodeId),
    #[error("event {0} is not in the coordinator's graph")]
    UnknownEvent(EventId),
    #[error("{sender} and {receiver} are in different committees")]
    Isolation { sender: NodeId, receiver: NodeId },
    #[error("committee {0} has already failed")]
    AlreadyFailed(CommitteeId),
    #[error("committee {0} has not failed")]
    NotFailed(CommitteeId),
    #[error("no replica of committee {0} survives")]
    NoReplica(CommitteeId),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error(transparent)]
    Hashgraph(#[from] HashgraphError),
}
