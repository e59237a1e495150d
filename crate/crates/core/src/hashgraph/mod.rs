//! The hashgraph event DAG and virtual-voting consensus.
//!
//! Every Local Committee and the Global Committee run the same machinery; a
//! [`Hashgraph`] is one node's view of one committee's DAG.

mod consensus;
mod event;
pub mod fixture;
mod graph;

use thiserror::Error;

pub use consensus::{ConsensusOrder, Fame, OrderEntry};
pub use event::{canonical_bytes, Event, EventId, EventSizeModel};
pub use graph::{gossip_sync, supermajority, Hashgraph, SyncOutcome, DEFAULT_COIN_PERIOD};

use crate::ids::NodeId;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum HashgraphError {
    #[error("population must have at least one member")]
    EmptyPopulation,
    #[error("{0} is not a member of this graph's population")]
    UnknownCreator(NodeId),
    #[error("event {0} does not resolve in this graph")]
    UnknownEvent(EventId),
    #[error("event {0}: self-parent was created by someone else")]
    SelfParentCreator(EventId),
    #[error("event {0}: other-parent was created by the same node")]
    OtherParentSameCreator(EventId),
    #[error("event {0}: has an other-parent but no self-parent")]
    MissingSelfParent(EventId),
    #[error("graphs have different populations")]
    PopulationMismatch,
}
