//! Communication and storage counters, and the closed-form costs they are
//! compared against.

mod recorder;

use std::collections::BTreeMap;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use recorder::Recorder;

use crate::ids::{CommitteeId, NodeId, Tick};

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("node count must be positive")]
    ZeroNodes,
    #[error("shard count must be positive")]
    ZeroShards,
    #[error("{n} nodes do not split evenly into {s} committees")]
    Unbalanced { n: u64, s: u64 },
    #[error("{0} must be finite and non-negative")]
    Negative(&'static str),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn non_negative(name: &'static str, v: f64) -> Result<f64, MetricsError> {
    if v.is_finite() && v >= 0.0 {
        Ok(v)
    } else {
        Err(MetricsError::Negative(name))
    }
}

/// Per-node cost without sharding: `(n - 1) * (T / n) * E`.
pub fn analytic_comm_cost(n: u64, throughput: f64, event_size: f64) -> Result<f64, MetricsError> {
    if n == 0 {
        return Err(MetricsError::ZeroNodes);
    }
    let t = non_negative("throughput", throughput)?;
    let e = non_negative("event size", event_size)?;
    Ok((n - 1) as f64 * (t / n as f64) * e)
}

/// Per-node cost with `s` committees: `(n / s - 1) * (T / n) * E`.
pub fn analytic_comm_cost_sharded(n: u64, s: u64, throughput: f64, event_size: f64) -> Result<f64, MetricsError> {
    if s == 0 {
        return Err(MetricsError::ZeroShards);
    }
    if n == 0 {
        return Err(MetricsError::ZeroNodes);
    }
    let t = non_negative("throughput", throughput)?;
    let e = non_negative("event size", event_size)?;
    Ok((n as f64 / s as f64 - 1.0) * (t / n as f64) * e)
}

/// Cost of sending cross-shard transactions: `T_cross * E`.
pub fn analytic_cross_cost(cross_throughput: f64, event_size: f64) -> Result<f64, MetricsError> {
    Ok(non_negative("cross throughput", cross_throughput)? * non_negative("event size", event_size)?)
}

/// Holders of one committee's graph: its `n / s` members plus the other
/// `s - 1` coordinators.
pub fn analytic_replica_count(n: u64, s: u64) -> Result<u64, MetricsError> {
    if s == 0 {
        return Err(MetricsError::ZeroShards);
    }
    if n % s != 0 {
        return Err(MetricsError::Unbalanced { n, s });
    }
    Ok(n / s + s - 1)
}

/// Fraction of presharding storage a committee member keeps.
pub fn analytic_storage_ratio(s: u64) -> Result<f64, MetricsError> {
    if s == 0 {
        return Err(MetricsError::ZeroShards);
    }
    Ok(1.0 / s as f64)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NodeMetrics {
    pub committee: Option<CommitteeId>,
    pub coordinator: bool,
    pub ever_coordinator: bool,
    /// Present from the first tick to the last.
    pub full_run: bool,
    pub local_sent: u64,
    pub global_sent: u64,
    pub received: u64,
    pub handshake: u64,
    pub replication_sent: u64,
    pub replication_received: u64,
    pub storage_units: u64,
    pub events_created: u64,
    pub empty_events: u64,
}

impl NodeMetrics {
    /// Event units this node sent over gossip links.
    pub fn comm(&self) -> u64 {
        self.local_sent + self.global_sent
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencyHistogram {
    pub bucket_width: u64,
    pub counts: BTreeMap<u64, u64>,
    pub samples: u64,
    pub total: u64,
    pub max: u64,
}

impl LatencyHistogram {
    pub fn new(bucket_width: u64) -> Self {
        LatencyHistogram {
            bucket_width: bucket_width.max(1),
            ..Default::default()
        }
    }

    pub fn record(&mut self, ticks: u64) {
        *self.counts.entry(ticks / self.bucket_width * self.bucket_width).or_default() += 1;
        self.samples += 1;
        self.total += ticks;
        self.max = self.max.max(ticks);
    }

    pub fn mean(&self) -> f64 {
        if self.samples == 0 {
            0.0
        } else {
            self.total as f64 / self.samples as f64
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Throughput {
    pub per_committee: BTreeMap<CommitteeId, f64>,
    pub total: f64,
}

/// Counters collected over one run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub duration: Tick,
    /// Ticks during which transactions were injected.
    pub injection_window: Tick,
    pub event_base_units: u64,
    pub event_tx_units: u64,
    pub injected: u64,
    pub injected_cross: u64,
    /// Cross-shard transfer units placed into Global Committee events.
    pub global_emitted: u64,
    /// Global Committee events carrying at least one transfer.
    pub global_carriers: u64,
    pub per_node: BTreeMap<NodeId, NodeMetrics>,
    pub throughput: Throughput,
    pub cross_latency: LatencyHistogram,
    pub replica_counts: BTreeMap<CommitteeId, usize>,
    pub empty_event_fraction: f64,
}

impl MetricsReport {
    pub fn per_node_comm(&self) -> BTreeMap<NodeId, u64> {
        self.per_node.iter().map(|(n, m)| (*n, m.comm())).collect()
    }

    pub fn per_node_storage(&self) -> BTreeMap<NodeId, u64> {
        self.per_node.iter().map(|(n, m)| (*n, m.storage_units)).collect()
    }

    pub fn total_sent(&self) -> u64 {
        self.per_node.values().map(|m| m.comm()).sum()
    }

    pub fn total_received(&self) -> u64 {
        self.per_node.values().map(|m| m.received).sum()
    }

    /// Size of an event carrying one transaction.
    pub fn event_size(&self) -> f64 {
        (self.event_base_units + self.event_tx_units) as f64
    }

    /// Injected transactions per tick of the injection window.
    pub fn offered_throughput(&self) -> f64 {
        self.injected as f64 / self.injection_window.max(1) as f64
    }

    pub fn cross_throughput(&self) -> f64 {
        self.injected_cross as f64 / self.injection_window.max(1) as f64
    }

    fn plain_members(&self) -> impl Iterator<Item = &NodeMetrics> {
        self.per_node.values().filter(|m| m.full_run && !m.ever_coordinator)
    }

    fn coordinators(&self) -> impl Iterator<Item = &NodeMetrics> {
        self.per_node.values().filter(|m| m.full_run && m.coordinator)
    }

    /// Mean send rate of members that never coordinated, in units per tick
    /// of the injection window.
    pub fn plain_member_comm_rate(&self) -> Option<f64> {
        mean(self.plain_members().map(|m| m.comm() as f64)).map(|v| v / self.injection_window.max(1) as f64)
    }

    pub fn coordinator_comm_rate(&self) -> Option<f64> {
        mean(self.coordinators().map(|m| m.comm() as f64)).map(|v| v / self.injection_window.max(1) as f64)
    }

    pub fn plain_member_storage(&self) -> Option<f64> {
        mean(self.plain_members().map(|m| m.storage_units as f64))
    }

    pub fn write_csvs(&self, dir: &Path, comparison: &[ComparisonRow]) -> Result<(), MetricsError> {
        let mut w = csv::Writer::from_path(dir.join("per_node_metrics.csv"))?;
        for (node, m) in &self.per_node {
            w.serialize(NodeRow {
                node: node.0,
                committee: m.committee.map(|k| k.0.to_string()).unwrap_or_default(),
                role: if m.coordinator { "coordinator" } else { "member" },
                full_run: m.full_run,
                local_sent: m.local_sent,
                global_sent: m.global_sent,
                received: m.received,
                handshake: m.handshake,
                replication_sent: m.replication_sent,
                replication_received: m.replication_received,
                storage_units: m.storage_units,
                events_created: m.events_created,
                empty_events: m.empty_events,
            })?;
        }
        w.flush()?;
        let mut w = csv::Writer::from_path(dir.join("formula_comparison.csv"))?;
        for row in comparison {
            w.serialize(row)?;
        }
        w.flush()?;
        let mut w = csv::Writer::from_path(dir.join("cross_latency_histogram.csv"))?;
        w.write_record(["bucket_start", "bucket_end", "count"])?;
        let width = self.cross_latency.bucket_width;
        for (start, count) in &self.cross_latency.counts {
            w.write_record([start.to_string(), (start + width).to_string(), count.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Serialize)]
struct NodeRow {
    node: u32,
    committee: String,
    role: &'static str,
    full_run: bool,
    local_sent: u64,
    global_sent: u64,
    received: u64,
    handshake: u64,
    replication_sent: u64,
    replication_received: u64,
    storage_units: u64,
    events_created: u64,
    empty_events: u64,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, count) = values.fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    (count > 0).then(|| sum / count as f64)
}

/// Inputs the comparison needs from the scenario.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonParams {
    pub n: u64,
    pub s: u64,
    pub tolerance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub quantity: String,
    pub scope: String,
    pub analytic: f64,
    pub measured: f64,
    pub relative_deviation: f64,
    pub tolerance: f64,
    /// Empty for informational rows.
    pub within_tolerance: Option<bool>,
}

impl ComparisonRow {
    fn new(quantity: &str, scope: &str, analytic: f64, measured: f64, tolerance: Option<f64>) -> Self {
        let relative_deviation = if analytic == 0.0 {
            if measured == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            (measured - analytic) / analytic
        };
        ComparisonRow {
            quantity: quantity.to_string(),
            scope: scope.to_string(),
            analytic,
            measured,
            relative_deviation,
            tolerance: tolerance.unwrap_or(0.0),
            within_tolerance: tolerance.map(|t| relative_deviation.abs() <= t),
        }
    }

    pub fn failed(&self) -> bool {
        self.within_tolerance == Some(false)
    }
}

/// Measured counters next to their closed forms. Coordinators get their own
/// informational rows.
pub fn compare_measured(report: &MetricsReport, params: &ComparisonParams) -> Vec<ComparisonRow> {
    let mut rows = Vec::new();
    let (n, s) = (params.n, params.s.max(1));
    let t = report.offered_throughput();
    let e = report.event_size();
    if let (Ok(analytic), Some(measured)) = (analytic_comm_cost_sharded(n, s, t, e), report.plain_member_comm_rate()) {
        rows.push(ComparisonRow::new("comm_per_node", "non-coordinator", analytic, measured, Some(params.tolerance)));
    }
    if let (Ok(analytic), Some(measured)) = (analytic_comm_cost(n, t, e), report.plain_member_comm_rate()) {
        rows.push(ComparisonRow::new("comm_per_node_unsharded", "non-coordinator", analytic, measured, None));
    }
    if let (Ok(local), Ok(cross), Some(measured)) = (
        analytic_comm_cost_sharded(n, s, t, e),
        analytic_cross_cost(report.cross_throughput() / s as f64, e),
        report.coordinator_comm_rate(),
    ) {
        rows.push(ComparisonRow::new("comm_per_node", "coordinator", local + cross, measured, None));
    }
    if let Ok(cross) = analytic_cross_cost(report.cross_throughput(), e) {
        let measured = report.global_emitted as f64 / report.injection_window.max(1) as f64;
        rows.push(ComparisonRow::new("cross_cost", "global-committee", cross, measured, None));
    }
    if let Some(measured) = report.plain_member_storage() {
        let cross_share = if report.injected == 0 {
            0.0
        } else {
            report.injected_cross as f64 / report.injected as f64
        };
        let analytic = report.injected as f64 * report.event_tx_units as f64 * (1.0 + cross_share) / s as f64;
        rows.push(ComparisonRow::new("storage_per_node", "non-coordinator", analytic, measured, Some(params.tolerance)));
    }
    if !report.replica_counts.is_empty() {
        if let Ok(analytic) = analytic_replica_count(n, s) {
            let measured = report.replica_counts.values().sum::<usize>() as f64 / report.replica_counts.len() as f64;
            rows.push(ComparisonRow::new("replica_count", "committee", analytic as f64, measured, Some(0.0)));
        }
    }
    let ordered = report.throughput.total;
    rows.push(ComparisonRow::new("throughput", "network", t, ordered, None));
    rows
}
