use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::Serialize;

use super::config::{AdversaryKind, ScenarioConfig};
use super::SimError;
use crate::hashgraph::EventId;
use crate::ids::{CommitteeId, NodeId, Tick, TxId};
use crate::metrics::{ComparisonRow, MetricsReport};
use crate::reconfig::ReorgRecord;
use crate::sharding::{QueueSnapshot, RecoveryReport};

/// Everything a run produced. A pure function of its configuration.
#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub config: ScenarioConfig,
    pub summary: RunSummary,
    pub metrics: MetricsReport,
    pub comparison: Vec<ComparisonRow>,
    pub committees: Vec<CommitteeSnapshot>,
    pub global: GlobalSnapshot,
    pub forks: Vec<ForkEvidence>,
    pub reorg_log: Vec<ReorgRecord>,
    pub adversary: AdversaryReport,
    pub checkpoints: Vec<CheckpointRecord>,
    pub failures: Vec<FailureRecord>,
    pub recoveries: Vec<RecoveryReport>,
    pub anomalies: Vec<String>,
    /// Written to `tx_audit.csv` rather than the JSON report.
    #[serde(skip)]
    pub tx_audit: Vec<TxAuditRow>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct RunSummary {
    pub events_processed: u64,
    pub events_by_kind: BTreeMap<String, u64>,
    pub final_tick: Tick,
    pub injected: u64,
    pub injected_cross: u64,
    /// Cross-shard transfers subject to the exactly-once audit.
    pub audited_cross: u64,
    pub cross_exactly_once: u64,
    pub cross_missing: u64,
    pub cross_duplicated: u64,
    pub intra_ordered: u64,
    pub intra_missing: u64,
    /// Transactions that existed only on nodes of a failed committee and
    /// were not captured by its last checkpoint.
    pub lost_at_failure: u64,
    pub agreement_checked: bool,
    pub honest_orders_agree: bool,
    pub partition_ok: bool,
    pub attack_demo: bool,
    pub empty_event_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct AgreementCheck {
    pub views_checked: usize,
    pub consistent: bool,
    pub shortest: usize,
    pub longest: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CommitteeSnapshot {
    pub committee: CommitteeId,
    pub failed: bool,
    pub epoch: u32,
    pub members: Vec<NodeId>,
    pub coordinator: Option<NodeId>,
    pub ledger_len: usize,
    pub ordered_events: usize,
    pub ledger_digest: String,
    pub duplicates: usize,
    pub agreement: Option<AgreementCheck>,
    pub queue: Option<QueueSnapshot>,
    pub replica_holders: Vec<NodeId>,
    pub byzantine: Vec<NodeId>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct GlobalSnapshot {
    pub epoch: u32,
    pub members: Vec<NodeId>,
    pub ledger_len: usize,
    pub ordered_events: usize,
    pub ledger_digest: String,
    pub agreement: Option<AgreementCheck>,
}

/// Two events by one creator on the same self-parent. `committee` is `None`
/// for the Global Committee graph.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ForkEvidence {
    pub committee: Option<CommitteeId>,
    pub creator: NodeId,
    pub first: EventId,
    pub second: EventId,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct AdversaryAction {
    pub at: Tick,
    pub action: String,
    pub node: Option<NodeId>,
    pub committee: Option<CommitteeId>,
    pub detail: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct AdversaryReport {
    pub kind: AdversaryKind,
    pub fraction: f64,
    pub attack_demo: bool,
    pub byzantine: Vec<NodeId>,
    pub adversarial: Vec<NodeId>,
    pub actions: Vec<AdversaryAction>,
    /// Consensus steps at which per-committee adversarial shares were sampled.
    pub samples: u64,
    pub samples_below_third: u64,
    pub max_fraction: f64,
    /// Chance that every committee stays below one third under uniform
    /// random assignment.
    pub binomial_prediction: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CheckpointRecord {
    pub at: Tick,
    pub global_round: u64,
    pub units_sent: u64,
    pub replica_counts: BTreeMap<CommitteeId, usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FailureRecord {
    pub at: Tick,
    pub committee: CommitteeId,
    pub members: Vec<NodeId>,
    pub ledger_len: usize,
    pub last_checkpoint: Option<Tick>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TxAuditRow {
    pub tx: TxId,
    pub class: &'static str,
    pub origin: CommitteeId,
    pub target: CommitteeId,
    pub node: NodeId,
    pub injected_at: Tick,
    pub ordered_count: usize,
    pub status: &'static str,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Write `report.json` and the CSV tables into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<(), SimError> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("report.json"), self.to_json())?;
        self.metrics.write_csvs(dir, &self.comparison)?;
        let mut w = csv::Writer::from_path(dir.join("tx_audit.csv")).map_err(crate::metrics::MetricsError::from)?;
        for row in &self.tx_audit {
            w.serialize(row).map_err(crate::metrics::MetricsError::from)?;
        }
        w.flush()?;
        Ok(())
    }

    /// The run matches the closed forms' assumptions: no adversary, no
    /// scripted membership changes, and few empty events.
    pub fn near_ideal(&self) -> bool {
        self.config.adversary.kind == AdversaryKind::None
            && self.config.script.leave.is_empty()
            && self.config.script.join.is_empty()
            && self.summary.empty_event_fraction < 0.1
    }

    /// Formula rows outside their tolerance. Only near-ideal runs are held
    /// to the formulas.
    pub fn tolerance_failures(&self) -> Vec<&ComparisonRow> {
        if !self.near_ideal() {
            return Vec::new();
        }
        self.comparison.iter().filter(|r| r.failed()).collect()
    }

    /// Every honest view agreed and every audited cross-shard transfer was
    /// ordered exactly once.
    pub fn healthy(&self) -> bool {
        self.summary.honest_orders_agree
            && self.summary.partition_ok
            && self.summary.cross_missing == 0
            && self.summary.cross_duplicated == 0
            && self.anomalies.is_empty()
    }
}
