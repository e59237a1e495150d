use std::collections::{BTreeMap, BTreeSet, HashSet, VecDeque};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::committee::CommitteeTable;
use super::ledger::{CommitteeLedger, LedgerEntry};
use super::queue::CacheQueue;
use super::ShardingError;
use crate::hashgraph::{ConsensusOrder, Event, EventId, Hashgraph};
use crate::ids::{CommitteeId, NodeId, Tick, TxId};
use crate::tx::{Transaction, TxKind};

/// Which gossip network a sync runs in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Pool {
    Local,
    Global,
}

/// Which consensus order a transaction was appended to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Scope {
    Local(CommitteeId),
    Global,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OrderedTx {
    pub scope: Scope,
    pub tx: Transaction,
    pub event: EventId,
    pub round_received: u32,
    pub consensus_timestamp: Tick,
    pub ordered_at: Tick,
}

/// A snapshot of one committee's hashgraph held by a coordinator of another
/// committee.
#[derive(Clone, Debug)]
pub struct Replica {
    pub committee: CommitteeId,
    pub epoch: u32,
    pub taken_at: Tick,
    pub graph: Arc<Hashgraph>,
    pub closed: Arc<Vec<LedgerEntry>>,
}

/// Events one node is about to pull from another, captured at send time so
/// delivery can be delayed.
#[derive(Clone, Debug)]
pub struct Delivery {
    pub pool: Pool,
    pub sender: NodeId,
    pub epoch: u32,
    pub events: Vec<Arc<Event>>,
    pub sender_head: Option<EventId>,
}

#[derive(Clone, Debug)]
pub struct SyncReport {
    pub pool: Pool,
    /// Events new to the receiver.
    pub inserted: Vec<Arc<Event>>,
    pub new_event: Arc<Event>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub committee: CommitteeId,
    pub replica_holder: NodeId,
    pub replica_taken_at: Tick,
    pub pre_failure_len: usize,
    pub checkpoint_len: usize,
    pub recovered_len: usize,
    pub prefix_preserved: bool,
    pub carried: usize,
    pub redelivered: usize,
    pub new_coordinator: NodeId,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemoveOutcome {
    pub committee: CommitteeId,
    pub was_coordinator: bool,
    pub new_coordinator: Option<NodeId>,
    pub committee_emptied: bool,
}

/// Every node's view of its committee graph and the Global Committee graph,
/// the cache queues, ledgers and replicas.
///
/// Each committee (and the Global Committee) also has an observer graph: the
/// union of all member views, from which the committee's order is read.
#[derive(Clone, Debug)]
pub struct ShardState {
    coin_period: u32,
    batch_limit: usize,
    next_tx: u64,
    views: BTreeMap<NodeId, Hashgraph>,
    global_views: BTreeMap<NodeId, Hashgraph>,
    observers: BTreeMap<CommitteeId, Hashgraph>,
    global_observer: Hashgraph,
    ledgers: BTreeMap<CommitteeId, CommitteeLedger>,
    global_ledger: CommitteeLedger,
    queues: BTreeMap<CommitteeId, CacheQueue>,
    pending: BTreeMap<NodeId, Vec<Transaction>>,
    control_local: BTreeMap<CommitteeId, Vec<Transaction>>,
    control_global: BTreeMap<CommitteeId, Vec<Transaction>>,
    archive: BTreeMap<TxId, Transaction>,
    emitted_local: HashSet<TxId>,
    replicas: BTreeMap<(NodeId, CommitteeId), Replica>,
    fresh: VecDeque<OrderedTx>,
    global_rounds_closed: u64,
    replication_sent: BTreeMap<NodeId, u64>,
    replication_received: BTreeMap<NodeId, u64>,
    violations: Vec<String>,
}

fn genesis_graph(
    members: &[NodeId],
    coordinator: Option<NodeId>,
    mut carried: Vec<Transaction>,
    coin_period: u32,
    now: Tick,
) -> Result<Hashgraph, ShardingError> {
    let mut g = Hashgraph::new(members.iter().copied())?.with_coin_period(coin_period);
    for &m in members {
        let payload = if Some(m) == coordinator {
            std::mem::take(&mut carried)
        } else {
            Vec::new()
        };
        g.create_event(m, None, payload, now)?;
    }
    Ok(g)
}

impl ShardState {
    /// Genesis graphs for every committee and the Global Committee.
    pub fn new(table: &CommitteeTable, coin_period: u32, batch_limit: usize, now: Tick) -> Result<Self, ShardingError> {
        table.check()?;
        let mut state = ShardState {
            coin_period,
            batch_limit: batch_limit.max(1),
            next_tx: 0,
            views: BTreeMap::new(),
            global_views: BTreeMap::new(),
            observers: BTreeMap::new(),
            global_observer: genesis_graph(&table.global_committee(), None, Vec::new(), coin_period, now)?,
            ledgers: BTreeMap::new(),
            global_ledger: CommitteeLedger::new(),
            queues: BTreeMap::new(),
            pending: BTreeMap::new(),
            control_local: BTreeMap::new(),
            control_global: BTreeMap::new(),
            archive: BTreeMap::new(),
            emitted_local: HashSet::new(),
            replicas: BTreeMap::new(),
            fresh: VecDeque::new(),
            global_rounds_closed: 0,
            replication_sent: BTreeMap::new(),
            replication_received: BTreeMap::new(),
            violations: Vec::new(),
        };
        for k in table.live_committees() {
            let members = table.members(k);
            let g = genesis_graph(&members, None, Vec::new(), coin_period, now)?;
            for &m in &members {
                state.views.insert(m, g.clone());
            }
            state.observers.insert(k, g);
            state.ledgers.insert(k, CommitteeLedger::new());
            let coord = table.coordinator(k).ok_or(ShardingError::NoCoordinator(k))?;
            state.queues.insert(k, CacheQueue::new(coord));
        }
        for c in table.global_committee() {
            state.global_views.insert(c, state.global_observer.clone());
        }
        Ok(state)
    }

    pub fn next_tx_id(&mut self) -> TxId {
        let id = TxId(self.next_tx);
        self.next_tx += 1;
        id
    }

    pub fn batch_limit(&self) -> usize {
        self.batch_limit
    }

    pub fn view(&self, node: NodeId) -> Option<&Hashgraph> {
        self.views.get(&node)
    }

    pub fn global_view(&self, node: NodeId) -> Option<&Hashgraph> {
        self.global_views.get(&node)
    }

    pub fn observer(&self, committee: CommitteeId) -> Option<&Hashgraph> {
        self.observers.get(&committee)
    }

    pub fn observer_mut(&mut self, committee: CommitteeId) -> Option<&mut Hashgraph> {
        self.observers.get_mut(&committee)
    }

    pub fn global_observer(&self) -> &Hashgraph {
        &self.global_observer
    }

    pub fn ledger(&self, committee: CommitteeId) -> Option<&CommitteeLedger> {
        self.ledgers.get(&committee)
    }

    pub fn global_ledger(&self) -> &CommitteeLedger {
        &self.global_ledger
    }

    pub fn queue(&self, committee: CommitteeId) -> Option<&CacheQueue> {
        self.queues.get(&committee)
    }

    pub fn archive(&self) -> &BTreeMap<TxId, Transaction> {
        &self.archive
    }

    pub fn pending(&self, node: NodeId) -> &[Transaction] {
        self.pending.get(&node).map(|v| v.as_slice()).unwrap_or(&[])
    }

    pub fn replicas(&self) -> &BTreeMap<(NodeId, CommitteeId), Replica> {
        &self.replicas
    }

    pub fn replication_sent(&self) -> &BTreeMap<NodeId, u64> {
        &self.replication_sent
    }

    pub fn replication_received(&self) -> &BTreeMap<NodeId, u64> {
        &self.replication_received
    }

    pub fn violations(&self) -> &[String] {
        &self.violations
    }

    pub fn local_epoch(&self, committee: CommitteeId) -> u32 {
        self.ledgers.get(&committee).map(|l| l.epoch()).unwrap_or(0)
    }

    pub fn global_epoch(&self) -> u32 {
        self.global_ledger.epoch()
    }

    /// Hand a new transaction to the node that received it from a client.
    ///
    /// A coordinator's own cross-shard transfers skip its local graph and go
    /// straight to the outbound queue.
    pub fn submit(&mut self, table: &CommitteeTable, node: NodeId, tx: Transaction) -> Result<(), ShardingError> {
        let k = table.committee_of(node).ok_or(ShardingError::NotAMember(node))?;
        if table.coordinator(k) == Some(node) && tx.is_cross_transfer() && tx.origin == k {
            if !self.archive.contains_key(&tx.id) {
                self.queues.get_mut(&k).ok_or(ShardingError::NoCoordinator(k))?.push_outbound(tx);
            }
        } else {
            self.pending.entry(node).or_default().push(tx);
        }
        Ok(())
    }

    /// Queue a reconfiguration request to ride on the coordinator's next event
    /// in the given pool.
    pub fn submit_control(&mut self, pool: Pool, committee: CommitteeId, tx: Transaction) {
        match pool {
            Pool::Local => self.control_local.entry(committee).or_default().push(tx),
            Pool::Global => self.control_global.entry(committee).or_default().push(tx),
        }
    }

    fn pool_graph(&self, pool: Pool, node: NodeId) -> Result<&Hashgraph, ShardingError> {
        let map = match pool {
            Pool::Local => &self.views,
            Pool::Global => &self.global_views,
        };
        map.get(&node).ok_or(ShardingError::NoView(node))
    }

    fn pool_epoch(&self, table: &CommitteeTable, pool: Pool, node: NodeId) -> Result<u32, ShardingError> {
        match pool {
            Pool::Local => {
                let k = table.committee_of(node).ok_or(ShardingError::NotAMember(node))?;
                Ok(self.local_epoch(k))
            }
            Pool::Global => Ok(self.global_epoch()),
        }
    }

    /// Capture what `receiver` would pull from `sender` right now.
    pub fn prepare_delivery(
        &self,
        table: &CommitteeTable,
        pool: Pool,
        sender: NodeId,
        receiver: NodeId,
    ) -> Result<Delivery, ShardingError> {
        let sg = self.pool_graph(pool, sender)?;
        let rg = self.pool_graph(pool, receiver)?;
        if sg.population() != rg.population() {
            return Err(ShardingError::Isolation { sender, receiver });
        }
        Ok(Delivery {
            pool,
            sender,
            epoch: self.pool_epoch(table, pool, receiver)?,
            events: sg.missing_from(rg),
            sender_head: sg.head(sender),
        })
    }

    /// Insert delivered events into the receiver's view and record the sync as
    /// a new event. Returns `None` if the graph was rebuilt since the delivery
    /// was captured.
    pub fn apply_delivery(
        &mut self,
        table: &CommitteeTable,
        receiver: NodeId,
        delivery: Delivery,
        now: Tick,
    ) -> Result<Option<SyncReport>, ShardingError> {
        if delivery.epoch != self.pool_epoch(table, delivery.pool, receiver)? {
            return Ok(None);
        }
        let pool = delivery.pool;
        let mut graph = match pool {
            Pool::Local => self.views.remove(&receiver),
            Pool::Global => self.global_views.remove(&receiver),
        }
        .ok_or(ShardingError::NoView(receiver))?;
        let result = self.sync_into(table, &mut graph, receiver, delivery, now);
        match pool {
            Pool::Local => self.views.insert(receiver, graph),
            Pool::Global => self.global_views.insert(receiver, graph),
        };
        let report = result?;
        let k = table.committee_of(receiver).ok_or(ShardingError::NotAMember(receiver))?;
        if table.coordinator(k) == Some(receiver) {
            for ev in &report.inserted {
                match pool {
                    Pool::Local => self.ingest_event(k, ev),
                    Pool::Global => self.receive_event(table, k, ev),
                };
            }
        }
        Ok(Some(report))
    }

    fn sync_into(
        &mut self,
        table: &CommitteeTable,
        graph: &mut Hashgraph,
        receiver: NodeId,
        delivery: Delivery,
        now: Tick,
    ) -> Result<SyncReport, ShardingError> {
        let mut inserted = Vec::new();
        for ev in delivery.events {
            if graph.insert(ev.clone())? {
                inserted.push(ev);
            }
        }
        let other_parent = delivery
            .sender_head
            .filter(|h| graph.contains(h) && graph.head(receiver).is_some());
        let payload = self.payload_for(table, delivery.pool, receiver)?;
        let new_event = graph.create_event(receiver, other_parent, payload, now)?;
        Ok(SyncReport {
            pool: delivery.pool,
            inserted,
            new_event,
        })
    }

    /// Transactions the node embeds in its next event in `pool`.
    fn payload_for(&mut self, table: &CommitteeTable, pool: Pool, node: NodeId) -> Result<Vec<Transaction>, ShardingError> {
        let k = table.committee_of(node).ok_or(ShardingError::NotAMember(node))?;
        let is_coord = table.coordinator(k) == Some(node);
        let mut payload = Vec::new();
        match pool {
            Pool::Local => {
                payload.extend(self.pending.remove(&node).unwrap_or_default());
                if is_coord {
                    payload.extend(self.control_local.remove(&k).unwrap_or_default());
                    let inbound = self
                        .queues
                        .get_mut(&k)
                        .map(|q| q.drain_inbound(self.batch_limit))
                        .unwrap_or_default();
                    for tx in inbound {
                        if self.emitted_local.insert(tx.id) {
                            payload.push(tx);
                        }
                    }
                    if payload.iter().any(|tx| tx.is_cross_transfer() && tx.origin == k) {
                        self.violations
                            .push(format!("coordinator {node} put an outgoing cross-shard transaction in its local graph"));
                    }
                }
            }
            Pool::Global => {
                if !is_coord {
                    return Err(ShardingError::NotCoordinator(node));
                }
                payload.extend(self.control_global.remove(&k).unwrap_or_default());
                let outbound = self
                    .queues
                    .get_mut(&k)
                    .map(|q| q.drain_outbound(self.batch_limit))
                    .unwrap_or_default();
                for tx in outbound {
                    self.archive.insert(tx.id, tx.clone());
                    payload.push(tx);
                }
            }
        }
        Ok(payload)
    }

    /// Sync `receiver` from `sender` in one step.
    pub fn sync(
        &mut self,
        table: &CommitteeTable,
        pool: Pool,
        sender: NodeId,
        receiver: NodeId,
        now: Tick,
    ) -> Result<SyncReport, ShardingError> {
        let d = self.prepare_delivery(table, pool, sender, receiver)?;
        Ok(self.apply_delivery(table, receiver, d, now)?.expect("delivery captured in the current epoch"))
    }

    /// A node with no gossip partner still records its own event.
    pub fn solo_event(&mut self, table: &CommitteeTable, pool: Pool, node: NodeId, now: Tick) -> Result<Arc<Event>, ShardingError> {
        let payload = self.payload_for(table, pool, node)?;
        let graph = match pool {
            Pool::Local => self.views.get_mut(&node),
            Pool::Global => self.global_views.get_mut(&node),
        }
        .ok_or(ShardingError::NoView(node))?;
        let ev = graph.create_event(node, None, payload, now)?;
        Ok(ev)
    }

    fn ingest_event(&mut self, committee: CommitteeId, ev: &Event) -> usize {
        let Some(queue) = self.queues.get_mut(&committee) else {
            return 0;
        };
        let mut added = 0;
        for tx in &ev.payload {
            if tx.is_cross_transfer() && tx.origin == committee && !self.archive.contains_key(&tx.id) && queue.push_outbound(tx.clone()) {
                added += 1;
            }
        }
        added
    }

    fn receive_event(&mut self, table: &CommitteeTable, committee: CommitteeId, ev: &Event) -> usize {
        let mut added = 0;
        for tx in &ev.payload {
            if !tx.is_cross_transfer() {
                continue;
            }
            self.archive.entry(tx.id).or_insert_with(|| tx.clone());
            if tx.target == committee {
                added += self.deliver_inbound(table, tx) as usize;
            }
        }
        added
    }

    /// A node that just became coordinator routes its own pending transfers
    /// and scans what its view already holds.
    fn take_over(&mut self, table: &CommitteeTable, k: CommitteeId, node: NodeId) -> Result<(), ShardingError> {
        for tx in self.pending.remove(&node).unwrap_or_default() {
            self.submit(table, node, tx)?;
        }
        let events: Vec<Arc<Event>> = self.views.get(&node).map(|g| g.events().cloned().collect()).unwrap_or_default();
        for ev in &events {
            self.ingest_event(k, ev);
        }
        Ok(())
    }

    fn deliver_inbound(&mut self, table: &CommitteeTable, tx: &Transaction) -> bool {
        let k = tx.target;
        if table.is_failed(k) || self.emitted_local.contains(&tx.id) {
            return false;
        }
        if self.ledgers.get(&k).is_some_and(|l| l.contains(tx.id)) {
            return false;
        }
        match self.queues.get_mut(&k) {
            Some(q) => q.push_inbound(tx.clone()),
            None => false,
        }
    }

    /// Coordinator of `committee` scans a local event for outgoing cross-shard
    /// transfers and queues them. Returns how many were new.
    pub fn coordinator_ingest_local(
        &mut self,
        table: &CommitteeTable,
        committee: CommitteeId,
        event: &EventId,
    ) -> Result<usize, ShardingError> {
        let coord = table.coordinator(committee).ok_or(ShardingError::NoCoordinator(committee))?;
        let ev = self
            .views
            .get(&coord)
            .and_then(|g| g.get(event))
            .cloned()
            .ok_or(ShardingError::UnknownEvent(*event))?;
        Ok(self.ingest_event(committee, &ev))
    }

    /// Coordinator of `committee` creates a Global Committee event carrying up
    /// to the batch limit of queued outgoing transfers.
    pub fn coordinator_emit_global(
        &mut self,
        table: &CommitteeTable,
        committee: CommitteeId,
        now: Tick,
    ) -> Result<Arc<Event>, ShardingError> {
        let coord = table.coordinator(committee).ok_or(ShardingError::NoCoordinator(committee))?;
        self.solo_event(table, Pool::Global, coord, now)
    }

    /// Coordinator of `committee` scans a Global Committee event for transfers
    /// addressed to it. Returns how many were newly queued.
    pub fn coordinator_receive_global(
        &mut self,
        table: &CommitteeTable,
        committee: CommitteeId,
        event: &EventId,
    ) -> Result<usize, ShardingError> {
        let coord = table.coordinator(committee).ok_or(ShardingError::NoCoordinator(committee))?;
        let ev = self
            .global_views
            .get(&coord)
            .and_then(|g| g.get(event))
            .cloned()
            .ok_or(ShardingError::UnknownEvent(*event))?;
        let mut added = 0;
        for tx in &ev.payload {
            if tx.is_cross_transfer() {
                self.archive.entry(tx.id).or_insert_with(|| tx.clone());
                if tx.target == committee {
                    added += self.deliver_inbound(table, tx) as usize;
                }
            }
        }
        Ok(added)
    }

    /// Coordinator of `committee` creates a local event carrying up to the
    /// batch limit of delivered transfers.
    pub fn coordinator_emit_local(
        &mut self,
        table: &CommitteeTable,
        committee: CommitteeId,
        now: Tick,
    ) -> Result<Arc<Event>, ShardingError> {
        let coord = table.coordinator(committee).ok_or(ShardingError::NoCoordinator(committee))?;
        self.solo_event(table, Pool::Local, coord, now)
    }

    /// Byzantine `byz` creates two events on the same self-parent and shows
    /// one to `first` and the other to `second`. Both then record a sync.
    pub fn equivocate(
        &mut self,
        table: &CommitteeTable,
        byz: NodeId,
        first: NodeId,
        second: NodeId,
        now: Tick,
    ) -> Result<(SyncReport, SyncReport), ShardingError> {
        let k = table.committee_of(byz).ok_or(ShardingError::NotAMember(byz))?;
        for p in [first, second] {
            if p == byz || table.committee_of(p) != Some(k) {
                return Err(ShardingError::NotAMember(p));
            }
        }
        let epoch = self.local_epoch(k);
        let view = self.views.get_mut(&byz).ok_or(ShardingError::NoView(byz))?;
        let self_parent = view.head(byz);
        let e1 = view.create_event(byz, None, Vec::new(), now)?;
        let e2 = Arc::new(Event::new(byz, self_parent, None, Vec::new(), now + 1));
        let view = &self.views[&byz];
        let d1 = Delivery {
            pool: Pool::Local,
            sender: byz,
            epoch,
            events: view.missing_from(self.pool_graph(Pool::Local, first)?),
            sender_head: Some(e1.id),
        };
        let mut ev2: Vec<Arc<Event>> = view
            .missing_from(self.pool_graph(Pool::Local, second)?)
            .into_iter()
            .filter(|e| e.id != e1.id)
            .collect();
        ev2.push(e2.clone());
        let d2 = Delivery {
            pool: Pool::Local,
            sender: byz,
            epoch,
            events: ev2,
            sender_head: Some(e2.id),
        };
        let r1 = self.apply_delivery(table, first, d1, now)?.expect("current epoch");
        let r2 = self.apply_delivery(table, second, d2, now)?.expect("current epoch");
        Ok((r1, r2))
    }

    fn refresh_observer(&mut self, table: &CommitteeTable, committee: CommitteeId) -> Result<(), ShardingError> {
        let Some(obs) = self.observers.get_mut(&committee) else {
            return Ok(());
        };
        for m in table.members(committee) {
            if let Some(v) = self.views.get(&m) {
                if v.population() == obs.population() {
                    obs.receive_from(v)?;
                }
            }
        }
        Ok(())
    }

    fn refresh_global_observer(&mut self) -> Result<(), ShardingError> {
        for v in self.global_views.values() {
            if v.population() == self.global_observer.population() {
                self.global_observer.receive_from(v)?;
            }
        }
        Ok(())
    }

    fn consume_local(&mut self, committee: CommitteeId, now: Tick) {
        let (Some(obs), Some(ledger)) = (self.observers.get_mut(&committee), self.ledgers.get_mut(&committee)) else {
            return;
        };
        let order = obs.consensus_since(ledger.consumed());
        append_order(obs, ledger, &order, Scope::Local(committee), now, &mut self.fresh);
    }

    fn consume_global(&mut self, now: Tick) {
        let order = self.global_observer.consensus_since(self.global_ledger.consumed());
        append_order(&self.global_observer, &mut self.global_ledger, &order, Scope::Global, now, &mut self.fresh);
    }

    /// Merge every view into the observers and append newly decided
    /// transactions to the ledgers.
    pub fn advance_consensus(&mut self, table: &CommitteeTable, now: Tick) -> Result<(), ShardingError> {
        for k in table.live_committees() {
            self.refresh_observer(table, k)?;
            self.consume_local(k, now);
        }
        self.refresh_global_observer()?;
        self.consume_global(now);
        Ok(())
    }

    /// Transactions ordered since the last call, in order.
    pub fn take_ordered(&mut self) -> Vec<OrderedTx> {
        self.fresh.drain(..).collect()
    }

    pub fn has_ordered(&self) -> bool {
        !self.fresh.is_empty()
    }

    /// Decided Global Committee rounds summed over all graph epochs.
    pub fn global_decided_rounds(&mut self) -> u64 {
        self.global_rounds_closed + self.global_observer.decided_rounds() as u64
    }

    /// Restart `committee`'s hashgraph with its current membership.
    ///
    /// Everything the old graph had ordered is appended to the ledger first.
    /// Unordered transactions move into the coordinator's genesis event,
    /// except outgoing cross-shard transfers, which are queued instead.
    fn rebase_committee(&mut self, table: &CommitteeTable, k: CommitteeId, now: Tick) -> Result<(), ShardingError> {
        self.refresh_observer(table, k)?;
        self.consume_local(k, now);
        let members = table.members(k);
        let coordinator = table.coordinator(k);
        let mut carried = Vec::new();
        if let (Some(obs), Some(ledger)) = (self.observers.get(&k), self.ledgers.get(&k)) {
            let mut seen = HashSet::new();
            for ev in obs.events() {
                for tx in &ev.payload {
                    if ledger.contains(tx.id) || !seen.insert(tx.id) {
                        continue;
                    }
                    if tx.is_cross_transfer() && tx.origin == k {
                        if !self.archive.contains_key(&tx.id) {
                            if let Some(q) = self.queues.get_mut(&k) {
                                q.push_outbound(tx.clone());
                            }
                        }
                    } else {
                        carried.push(tx.clone());
                    }
                }
            }
        }
        if let Some(l) = self.ledgers.get_mut(&k) {
            l.close_epoch();
        }
        if members.is_empty() {
            return Ok(());
        }
        let g = genesis_graph(&members, coordinator, carried, self.coin_period, now)?;
        for &m in &members {
            self.views.insert(m, g.clone());
        }
        self.observers.insert(k, g);
        Ok(())
    }

    /// Restart the Global Committee graph with the current coordinators.
    ///
    /// Every transfer the old graph carried is re-offered to its target
    /// coordinator; unordered control requests are queued again.
    fn rebase_global(&mut self, table: &CommitteeTable, now: Tick) -> Result<(), ShardingError> {
        self.refresh_global_observer()?;
        self.consume_global(now);
        self.global_rounds_closed += self.global_observer.decided_rounds() as u64;
        let live = table.live_committees();
        let mut requeue = Vec::new();
        let mut seen = HashSet::new();
        let events: Vec<Arc<Event>> = self.global_observer.events().cloned().collect();
        for ev in &events {
            for tx in &ev.payload {
                if !seen.insert(tx.id) {
                    continue;
                }
                if tx.is_cross_transfer() {
                    self.archive.entry(tx.id).or_insert_with(|| tx.clone());
                    self.deliver_inbound(table, tx);
                } else if !self.global_ledger.contains(tx.id) {
                    requeue.push(tx.clone());
                }
            }
        }
        for tx in requeue {
            let home = if live.contains(&tx.origin) {
                tx.origin
            } else {
                match live.first() {
                    Some(k) => *k,
                    None => continue,
                }
            };
            self.control_global.entry(home).or_default().push(tx);
        }
        self.global_ledger.close_epoch();
        let coords = table.global_committee();
        self.global_views.clear();
        if coords.is_empty() {
            return Ok(());
        }
        self.global_observer = genesis_graph(&coords, None, Vec::new(), self.coin_period, now)?;
        for c in coords {
            self.global_views.insert(c, self.global_observer.clone());
        }
        Ok(())
    }

    fn handover(&mut self, k: CommitteeId, old: Option<NodeId>, new: NodeId) -> Result<(), ShardingError> {
        self.refresh_global_observer()?;
        if let Some(q) = self.queues.get_mut(&k) {
            q.owner = new;
        }
        if let Some(old) = old {
            let moved: Vec<(NodeId, CommitteeId)> = self.replicas.keys().filter(|(h, _)| *h == old).copied().collect();
            for key in moved {
                let r = self.replicas.remove(&key).expect("key listed");
                if r.committee != k {
                    self.replicas.entry((new, r.committee)).or_insert(r);
                }
            }
        }
        Ok(())
    }

    /// Put `node` into `committee` and restart that committee's graph.
    pub fn add_member(
        &mut self,
        table: &mut CommitteeTable,
        node: NodeId,
        committee: CommitteeId,
        now: Tick,
    ) -> Result<(), ShardingError> {
        if table.committee_of(node).is_some() {
            return Err(ShardingError::AlreadyMember(node));
        }
        if table.is_failed(committee) || committee.0 >= table.shard_count() {
            return Err(ShardingError::NoCoordinator(committee));
        }
        self.refresh_observer(table, committee)?;
        table.assign(node, committee);
        self.rebase_committee(table, committee, now)
    }

    /// Take `node` out of its committee. Its pending transactions pass to the
    /// coordinator; if it was the coordinator, the lowest remaining member
    /// takes over until a reselection completes.
    pub fn remove_member(&mut self, table: &mut CommitteeTable, node: NodeId, now: Tick) -> Result<RemoveOutcome, ShardingError> {
        let k = table.committee_of(node).ok_or(ShardingError::NotAMember(node))?;
        self.refresh_observer(table, k)?;
        let was_coordinator = table.coordinator(k) == Some(node);
        let leftover = self.pending.remove(&node).unwrap_or_default();
        table.remove(node);
        self.views.remove(&node);
        let remaining = table.members(k);
        if remaining.is_empty() {
            self.refresh_global_observer()?;
            table.mark_failed(k);
            self.rebase_committee(table, k, now)?;
            self.queues.remove(&k);
            self.rebase_global(table, now)?;
            return Ok(RemoveOutcome {
                committee: k,
                was_coordinator,
                new_coordinator: None,
                committee_emptied: true,
            });
        }
        let mut new_coordinator = None;
        if was_coordinator {
            let interim = remaining[0];
            self.handover(k, Some(node), interim)?;
            table.set_coordinator(k, interim);
            self.take_over(table, k, interim)?;
            new_coordinator = Some(interim);
        }
        let coord = table.coordinator(k).ok_or(ShardingError::NoCoordinator(k))?;
        for tx in leftover {
            self.submit(table, coord, tx)?;
        }
        self.rebase_committee(table, k, now)?;
        if was_coordinator {
            self.rebase_global(table, now)?;
        }
        Ok(RemoveOutcome {
            committee: k,
            was_coordinator,
            new_coordinator,
            committee_emptied: false,
        })
    }

    /// Move non-coordinator members from `from` to `to`.
    pub fn move_members(
        &mut self,
        table: &mut CommitteeTable,
        nodes: &[NodeId],
        from: CommitteeId,
        to: CommitteeId,
        now: Tick,
    ) -> Result<(), ShardingError> {
        if table.is_failed(to) {
            return Err(ShardingError::NoCoordinator(to));
        }
        for &n in nodes {
            if table.committee_of(n) != Some(from) {
                return Err(ShardingError::NotAMember(n));
            }
            if table.coordinator(from) == Some(n) {
                return Err(ShardingError::Invariant(format!("cannot move coordinator {n}")));
            }
        }
        self.refresh_observer(table, from)?;
        self.refresh_observer(table, to)?;
        let coord = table.coordinator(from).ok_or(ShardingError::NoCoordinator(from))?;
        for &n in nodes {
            let leftover = self.pending.remove(&n).unwrap_or_default();
            for tx in leftover {
                self.submit(table, coord, tx)?;
            }
            self.views.remove(&n);
            table.assign(n, to);
        }
        self.rebase_committee(table, from, now)?;
        self.rebase_committee(table, to, now)
    }

    /// Make `node` the coordinator of its committee.
    pub fn change_coordinator(&mut self, table: &mut CommitteeTable, node: NodeId, now: Tick) -> Result<bool, ShardingError> {
        let k = table.committee_of(node).ok_or(ShardingError::NotAMember(node))?;
        let old = table.coordinator(k);
        if old == Some(node) {
            return Ok(false);
        }
        self.handover(k, old, node)?;
        table.set_coordinator(k, node);
        self.take_over(table, k, node)?;
        self.rebase_global(table, now)?;
        Ok(true)
    }

    /// Snapshot `committee`'s graph from its coordinator onto every other
    /// live coordinator. Returns the units sent; unchanged replicas cost
    /// nothing.
    pub fn replicate_checkpoint(&mut self, table: &CommitteeTable, committee: CommitteeId, now: Tick) -> Result<u64, ShardingError> {
        let coord = table.coordinator(committee).ok_or(ShardingError::NoCoordinator(committee))?;
        let view = self.views.get(&coord).ok_or(ShardingError::NoView(coord))?;
        let epoch = self.local_epoch(committee);
        let closed = Arc::new(self.ledgers.get(&committee).map(|l| l.closed().to_vec()).unwrap_or_default());
        let mut snapshot: Option<Arc<Hashgraph>> = None;
        let mut total = 0;
        for holder in table.global_committee() {
            if holder == coord {
                continue;
            }
            let key = (holder, committee);
            let prior = self.replicas.get(&key);
            if let Some(p) = prior {
                if p.epoch == epoch && p.graph.len() == view.len() {
                    continue;
                }
            }
            let units = match prior {
                Some(p) if p.epoch == epoch => view.payload_units() - p.graph.payload_units(),
                _ => view.payload_units(),
            };
            let graph = snapshot.get_or_insert_with(|| Arc::new(view.clone())).clone();
            self.replicas.insert(
                key,
                Replica {
                    committee,
                    epoch,
                    taken_at: now,
                    graph,
                    closed: closed.clone(),
                },
            );
            *self.replication_sent.entry(coord).or_default() += units;
            *self.replication_received.entry(holder).or_default() += units;
            total += units;
        }
        Ok(total)
    }

    /// Coordinators other than `committee`'s own holding an up-to-date-epoch
    /// replica of it.
    pub fn replica_holders(&self, table: &CommitteeTable, committee: CommitteeId) -> Vec<NodeId> {
        let epoch = self.local_epoch(committee);
        let coord = table.coordinator(committee);
        table
            .global_committee()
            .into_iter()
            .filter(|h| Some(*h) != coord)
            .filter(|h| self.replicas.get(&(*h, committee)).is_some_and(|r| r.epoch == epoch))
            .collect()
    }

    /// Nodes holding a complete copy of `committee`'s graph: its members plus
    /// replica holders.
    pub fn replica_count(&self, table: &CommitteeTable, committee: CommitteeId) -> usize {
        table.size(committee) + self.replica_holders(table, committee).len()
    }

    /// Every member of `committee` stops. Queues, pending transactions and
    /// replicas held by its coordinator are lost. Returns the ledger length
    /// at failure.
    pub fn fail_committee(&mut self, table: &mut CommitteeTable, committee: CommitteeId, now: Tick) -> Result<usize, ShardingError> {
        if table.is_failed(committee) {
            return Err(ShardingError::AlreadyFailed(committee));
        }
        self.refresh_observer(table, committee)?;
        self.consume_local(committee, now);
        self.refresh_global_observer()?;
        let coord = table.coordinator(committee);
        for m in table.members(committee) {
            self.views.remove(&m);
            self.pending.remove(&m);
        }
        if let Some(c) = coord {
            self.global_views.remove(&c);
            self.replicas.retain(|(h, _), _| *h != c);
        }
        self.queues.remove(&committee);
        self.control_local.remove(&committee);
        self.control_global.remove(&committee);
        table.mark_failed(committee);
        self.rebase_global(table, now)?;
        Ok(self.ledgers.get(&committee).map(|l| l.len()).unwrap_or(0))
    }

    /// Rebuild a failed committee from the freshest replica with a fresh set of
    /// members. The lowest replacement id becomes coordinator.
    pub fn recover_failed_shard(
        &mut self,
        table: &mut CommitteeTable,
        committee: CommitteeId,
        replacements: &BTreeSet<NodeId>,
        now: Tick,
    ) -> Result<RecoveryReport, ShardingError> {
        if !table.is_failed(committee) {
            return Err(ShardingError::NotFailed(committee));
        }
        if replacements.is_empty() {
            return Err(ShardingError::Invariant("recovery needs at least one replacement node".into()));
        }
        for n in replacements {
            if table.committee_of(*n).is_some() {
                return Err(ShardingError::AlreadyMember(*n));
            }
        }
        let (holder, replica) = self
            .replicas
            .iter()
            .filter(|((_, c), _)| *c == committee)
            .max_by(|(ka, a), (kb, b)| {
                (a.epoch, a.graph.len(), a.taken_at)
                    .cmp(&(b.epoch, b.graph.len(), b.taken_at))
                    .then(kb.0.cmp(&ka.0))
            })
            .map(|((h, _), r)| (*h, r.clone()))
            .ok_or(ShardingError::NoReplica(committee))?;

        let old = self.ledgers.remove(&committee).unwrap_or_default();
        let mut ledger = CommitteeLedger::from_closed(replica.epoch, &replica.closed);
        let mut graph = (*replica.graph).clone();
        let order = graph.consensus_order();
        let mut sink = VecDeque::new();
        append_order(&graph, &mut ledger, &order, Scope::Local(committee), now, &mut sink);
        let checkpoint_len = ledger.len();
        let prefix_preserved = checkpoint_len <= old.len() && old.entries()[..checkpoint_len] == ledger.entries()[..];

        let coordinator = *replacements.iter().next().expect("non-empty");
        table.clear_failed(committee);
        for &n in replacements {
            table.assign(n, committee);
        }
        table.set_coordinator(committee, coordinator);
        self.queues.insert(committee, CacheQueue::new(coordinator));

        let mut carried = Vec::new();
        let mut seen = HashSet::new();
        for ev in graph.events() {
            for tx in &ev.payload {
                if ledger.contains(tx.id) || !seen.insert(tx.id) {
                    continue;
                }
                if tx.is_cross_transfer() && tx.origin == committee {
                    if !self.archive.contains_key(&tx.id) {
                        self.queues.get_mut(&committee).expect("just inserted").push_outbound(tx.clone());
                    }
                } else {
                    carried.push(tx.clone());
                }
            }
        }
        let carried_ids: HashSet<TxId> = carried.iter().map(|t| t.id).collect();
        let mut redelivered = 0;
        let targeted: Vec<Transaction> = self.archive.values().filter(|t| t.target == committee).cloned().collect();
        for tx in targeted {
            if ledger.contains(tx.id) || carried_ids.contains(&tx.id) {
                continue;
            }
            self.emitted_local.remove(&tx.id);
            if self.queues.get_mut(&committee).expect("just inserted").push_inbound(tx) {
                redelivered += 1;
            }
        }
        ledger.close_epoch();
        while ledger.epoch() <= old.epoch() {
            ledger.close_epoch();
        }
        let recovered_len = ledger.len();
        self.ledgers.insert(committee, ledger);
        let members = table.members(committee);
        let carried_count = carried.len();
        let g = genesis_graph(&members, Some(coordinator), carried, self.coin_period, now)?;
        for &m in &members {
            self.views.insert(m, g.clone());
        }
        self.observers.insert(committee, g);
        self.replicas.retain(|(_, c), _| *c != committee);
        self.rebase_global(table, now)?;
        Ok(RecoveryReport {
            committee,
            replica_holder: holder,
            replica_taken_at: replica.taken_at,
            pre_failure_len: old.len(),
            checkpoint_len,
            recovered_len,
            prefix_preserved,
            carried: carried_count,
            redelivered,
            new_coordinator: coordinator,
        })
    }

    /// Graph payload units `node` stores: its committee view, its Global
    /// Committee view, and any replicas it holds.
    pub fn storage_units(&self, node: NodeId) -> u64 {
        let local = self.views.get(&node).map(|g| g.payload_units()).unwrap_or(0);
        let global = self.global_views.get(&node).map(|g| g.payload_units()).unwrap_or(0);
        let replicas: u64 = self
            .replicas
            .iter()
            .filter(|((h, _), _)| *h == node)
            .map(|(_, r)| r.graph.payload_units())
            .sum();
        local + global + replicas
    }

    /// Structural invariants over views, queues and the committee table.
    pub fn check(&self, table: &CommitteeTable) -> Result<(), ShardingError> {
        table.check()?;
        if let Some(v) = self.violations.first() {
            return Err(ShardingError::Invariant(v.clone()));
        }
        let nodes: BTreeSet<NodeId> = table.nodes().collect();
        let viewers: BTreeSet<NodeId> = self.views.keys().copied().collect();
        if nodes != viewers {
            return Err(ShardingError::Invariant("local views differ from the member set".into()));
        }
        for k in table.live_committees() {
            let members = table.members(k);
            for m in &members {
                if self.views[m].population() != members.as_slice() {
                    return Err(ShardingError::Invariant(format!("view of {m} does not match committee {k}")));
                }
            }
            let q = self.queues.get(&k).ok_or(ShardingError::NoCoordinator(k))?;
            if Some(q.owner) != table.coordinator(k) {
                return Err(ShardingError::Invariant(format!("queue of {k} not owned by its coordinator")));
            }
            for tx in q.outbound() {
                if tx.origin != k || self.archive.contains_key(&tx.id) {
                    return Err(ShardingError::Invariant(format!("{} queued outbound twice", tx.id)));
                }
            }
            for tx in q.inbound() {
                if tx.target != k || self.emitted_local.contains(&tx.id) {
                    return Err(ShardingError::Invariant(format!("{} queued inbound twice", tx.id)));
                }
            }
        }
        let coords = table.global_committee();
        let holders: Vec<NodeId> = self.global_views.keys().copied().collect();
        if coords != holders {
            return Err(ShardingError::Invariant("global views differ from the coordinator set".into()));
        }
        for c in &coords {
            if self.global_views[c].population() != coords.as_slice() {
                return Err(ShardingError::Invariant(format!("global view of {c} has a stale population")));
            }
        }
        Ok(())
    }
}

fn append_order(
    graph: &Hashgraph,
    ledger: &mut CommitteeLedger,
    order: &ConsensusOrder,
    scope: Scope,
    now: Tick,
    sink: &mut VecDeque<OrderedTx>,
) {
    for entry in &order.ordered {
        ledger.note_event();
        let ev = graph.get(&entry.event).expect("ordered event is in its graph");
        for tx in &ev.payload {
            let fresh = ledger.record(LedgerEntry {
                tx: tx.id,
                event: entry.event,
                epoch: ledger.epoch(),
                round_received: entry.round_received,
                consensus_timestamp: entry.consensus_timestamp,
            });
            if fresh {
                sink.push_back(OrderedTx {
                    scope,
                    tx: tx.clone(),
                    event: entry.event,
                    round_received: entry.round_received,
                    consensus_timestamp: entry.consensus_timestamp,
                    ordered_at: now,
                });
            }
        }
    }
}

/// Is `tx` a reconfiguration request rather than a transfer?
pub fn is_control(tx: &Transaction) -> bool {
    tx.kind != TxKind::Transfer
}
