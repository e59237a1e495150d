use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use super::{LatencyHistogram, MetricsReport, NodeMetrics, Throughput};
use crate::hashgraph::{Event, EventSizeModel};
use crate::ids::{CommitteeId, NodeId, Tick};
use crate::sharding::{CommitteeTable, Pool, ShardState};
use crate::tx::Transaction;

/// Accumulates counters while a simulation runs.
#[derive(Clone, Debug)]
pub struct Recorder {
    size: EventSizeModel,
    handshake_units: u64,
    window_end: Tick,
    nodes: BTreeMap<NodeId, NodeMetrics>,
    partial: BTreeSet<NodeId>,
    injected: u64,
    injected_cross: u64,
    global_emitted: u64,
    global_carriers: u64,
    ordered: BTreeMap<CommitteeId, u64>,
    latency: LatencyHistogram,
    window_events: u64,
    window_empty: u64,
}

impl Recorder {
    pub fn new(size: EventSizeModel, handshake_units: u64, window_end: Tick, latency_bucket: u64) -> Self {
        Recorder {
            size,
            handshake_units,
            window_end,
            nodes: BTreeMap::new(),
            partial: BTreeSet::new(),
            injected: 0,
            injected_cross: 0,
            global_emitted: 0,
            global_carriers: 0,
            ordered: BTreeMap::new(),
            latency: LatencyHistogram::new(latency_bucket),
            window_events: 0,
            window_empty: 0,
        }
    }

    pub fn node_started(&mut self, node: NodeId, now: Tick) {
        self.nodes.entry(node).or_default();
        if now > 0 {
            self.partial.insert(node);
        }
    }

    pub fn node_stopped(&mut self, node: NodeId) {
        self.partial.insert(node);
    }

    pub fn note_coordinators(&mut self, table: &CommitteeTable) {
        for c in table.global_committee() {
            self.nodes.entry(c).or_default().ever_coordinator = true;
        }
    }

    /// Charge `from` for every event it handed to `to`.
    pub fn transfer(&mut self, pool: Pool, from: NodeId, to: NodeId, events: &[Arc<Event>]) {
        let units: u64 = events.iter().map(|e| self.size.size(e)).sum();
        let sender = self.nodes.entry(from).or_default();
        match pool {
            Pool::Local => sender.local_sent += units,
            Pool::Global => sender.global_sent += units,
        }
        self.nodes.entry(to).or_default().received += units;
    }

    pub fn handshake(&mut self, a: NodeId, b: NodeId) {
        self.nodes.entry(a).or_default().handshake += self.handshake_units;
        self.nodes.entry(b).or_default().handshake += self.handshake_units;
    }

    pub fn created(&mut self, pool: Pool, event: &Event, now: Tick) {
        let m = self.nodes.entry(event.creator).or_default();
        m.events_created += 1;
        if event.payload.is_empty() {
            m.empty_events += 1;
        }
        if pool == Pool::Local && now < self.window_end {
            self.window_events += 1;
            if event.payload.is_empty() {
                self.window_empty += 1;
            }
        }
        if pool == Pool::Global {
            let units: u64 = event
                .payload
                .iter()
                .filter(|t| t.is_cross_transfer())
                .map(|t| t.size_units as u64)
                .sum();
            self.global_emitted += units;
            self.global_carriers += (units > 0) as u64;
        }
    }

    pub fn injected(&mut self, tx: &Transaction) {
        self.injected += 1;
        if tx.is_cross() {
            self.injected_cross += 1;
        }
    }

    pub fn ordered(&mut self, committee: CommitteeId) {
        *self.ordered.entry(committee).or_default() += 1;
    }

    pub fn cross_latency(&mut self, ticks: u64) {
        self.latency.record(ticks);
    }

    pub fn finish(mut self, duration: Tick, table: &CommitteeTable, state: &ShardState) -> MetricsReport {
        self.note_coordinators(table);
        let coordinators: BTreeSet<NodeId> = table.global_committee().into_iter().collect();
        for (node, m) in self.nodes.iter_mut() {
            m.committee = table.committee_of(*node);
            m.coordinator = coordinators.contains(node);
            m.full_run = m.committee.is_some() && !self.partial.contains(node);
            m.storage_units = state.storage_units(*node);
            m.replication_sent = state.replication_sent().get(node).copied().unwrap_or(0);
            m.replication_received = state.replication_received().get(node).copied().unwrap_or(0);
        }
        let span = duration.max(1) as f64;
        let per_committee: BTreeMap<CommitteeId, f64> =
            table.committees().map(|k| (k, self.ordered.get(&k).copied().unwrap_or(0) as f64 / span)).collect();
        let total = self.ordered.values().sum::<u64>() as f64 / span;
        let replica_counts = table
            .live_committees()
            .into_iter()
            .map(|k| (k, state.replica_count(table, k)))
            .collect();
        MetricsReport {
            duration,
            injection_window: self.window_end.min(duration),
            event_base_units: self.size.base,
            event_tx_units: self.size.per_tx,
            injected: self.injected,
            injected_cross: self.injected_cross,
            global_emitted: self.global_emitted,
            global_carriers: self.global_carriers,
            per_node: self.nodes,
            throughput: Throughput { per_committee, total },
            cross_latency: self.latency,
            replica_counts,
            empty_event_fraction: if self.window_events == 0 {
                0.0
            } else {
                self.window_empty as f64 / self.window_events as f64
            },
        }
    }
}
