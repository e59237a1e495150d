//! Deterministic discrete-event simulation of the sharded protocol.

mod config;
mod report;
mod run;
mod schedule;
mod workload;

use std::io;

pub use config::{
    parse_override, AdversaryKind, AdversarySection, AuditSection, ConfigError, MetricsSection, ProtocolSection,
    ReconfigSection, ScenarioConfig, ScenarioSection, ScriptSection, WorkloadSection,
};
pub use report::{
    AdversaryAction, AdversaryReport, AgreementCheck, CheckpointRecord, CommitteeSnapshot, FailureRecord,
    ForkEvidence, GlobalSnapshot, RunReport, RunSummary, TxAuditRow,
};
pub use run::{binomial_safety_prediction, run_scenario, Simulation};
pub use schedule::{Schedule, SimEvent, SimEventKind};
pub use workload::{gossip_partner, inject_workload};

use crate::ids::{NodeId, Tick};
use crate::metrics::MetricsError;
use crate::reconfig::ReconfigError;
use crate::sharding::{Pool, ShardingError};

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0} is not an active node")]
    Inactive(NodeId),
    #[error("{node} has no partner in the {pool:?} pool")]
    NoPartner { node: NodeId, pool: Pool },
    #[error("invariant violated at event {event_index} (tick {tick}): {message}")]
    Invariant { event_index: u64, tick: Tick, message: String },
    #[error(transparent)]
    Sharding(#[from] ShardingError),
    #[error(transparent)]
    Reconfig(#[from] ReconfigError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Io(#[from] io::Error),
}
