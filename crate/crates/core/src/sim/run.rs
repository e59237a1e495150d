use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{Binomial, DiscreteCDF};

use super::config::{AdversaryKind, ScenarioConfig};
use super::report::*;
use super::schedule::{Schedule, SimEventKind};
use super::workload::{gossip_partner, inject_workload};
use super::SimError;
use crate::hashgraph::{ConsensusOrder, Hashgraph};
use crate::ids::{CommitteeId, NodeId, Tick, TxId};
use crate::metrics::{compare_measured, ComparisonParams, Recorder};
use crate::reconfig::Reconfigurator;
use crate::sharding::{partition_nodes, CommitteeTable, OrderedTx, Pool, Scope, ShardState};
use crate::tx::{Transaction, TxKind};

#[derive(Clone, Debug)]
struct TxRecord {
    tx: Transaction,
    node: NodeId,
    ordered_at: Option<Tick>,
}

/// One scenario in progress.
pub struct Simulation {
    config: ScenarioConfig,
    rng: ChaCha8Rng,
    table: CommitteeTable,
    state: ShardState,
    reconfig: Reconfigurator,
    recorder: Recorder,
    schedule: Schedule,
    now: Tick,
    processed: u64,
    by_kind: BTreeMap<String, u64>,
    next_node: u32,
    duty: BTreeMap<NodeId, u64>,
    scheduled: BTreeSet<NodeId>,
    byzantine: BTreeSet<NodeId>,
    adversarial: BTreeSet<NodeId>,
    initial_adversarial: usize,
    txs: BTreeMap<TxId, TxRecord>,
    at_risk: BTreeSet<TxId>,
    actions: Vec<AdversaryAction>,
    anomalies: Vec<String>,
    checkpoints: Vec<CheckpointRecord>,
    failures: Vec<FailureRecord>,
    recoveries: Vec<crate::sharding::RecoveryReport>,
    last_checkpoint_round: u64,
    last_checkpoint_at: Option<Tick>,
    adv_samples: u64,
    adv_below: u64,
    adv_max: f64,
}

/// Run `config` to its horizon.
pub fn run_scenario(config: &ScenarioConfig) -> Result<RunReport, SimError> {
    Simulation::new(config.clone())?.run()
}

/// Probability that all `s` committees of `m` members stay below one third
/// adversarial when each member is adversarial independently with
/// probability `f`.
pub fn binomial_safety_prediction(m: u64, s: u64, f: f64) -> f64 {
    if m == 0 {
        return 1.0;
    }
    let Ok(bin) = Binomial::new(f.clamp(0.0, 1.0), m) else {
        return 1.0;
    };
    // X < m/3  <=>  X <= ceil(m/3) - 1
    let below = m.div_ceil(3).saturating_sub(1);
    bin.cdf(below).powi(s as i32)
}

impl Simulation {
    pub fn new(config: ScenarioConfig) -> Result<Self, SimError> {
        config.validate()?;
        let sc = &config.scenario;
        let mut rng = ChaCha8Rng::seed_from_u64(sc.seed);
        let nodes: BTreeSet<NodeId> = (0..sc.n).map(NodeId).collect();
        let table = partition_nodes(&nodes, sc.s, rng.next_u64())?;
        let state = ShardState::new(&table, config.protocol.coin_period, config.protocol.batch_limit, 0)?;
        let reconfig = Reconfigurator::new(config.reconfig_config(), &table);
        let mut recorder = Recorder::new(
            config.event_size(),
            config.metrics.handshake_units,
            config.injection_end(),
            config.metrics.latency_bucket,
        );
        for n in &nodes {
            recorder.node_started(*n, 0);
        }
        recorder.note_coordinators(&table);
        let mut sim = Simulation {
            rng,
            table,
            state,
            reconfig,
            recorder,
            schedule: Schedule::new(),
            now: 0,
            processed: 0,
            by_kind: BTreeMap::new(),
            next_node: sc.n,
            duty: BTreeMap::new(),
            scheduled: BTreeSet::new(),
            byzantine: BTreeSet::new(),
            adversarial: BTreeSet::new(),
            initial_adversarial: 0,
            txs: BTreeMap::new(),
            at_risk: BTreeSet::new(),
            actions: Vec::new(),
            anomalies: Vec::new(),
            checkpoints: Vec::new(),
            failures: Vec::new(),
            recoveries: Vec::new(),
            last_checkpoint_round: 0,
            last_checkpoint_at: None,
            adv_samples: 0,
            adv_below: 0,
            adv_max: 0.0,
            config,
        };
        sim.pick_adversaries();
        sim.seed_schedule(nodes);
        Ok(sim)
    }

    fn pick_adversaries(&mut self) {
        let a = self.config.adversary.clone();
        match a.kind {
            AdversaryKind::Equivocator if a.fraction > 0.0 => {
                for k in self.table.live_committees() {
                    let m = self.table.size(k);
                    let count = ((a.fraction * m as f64).floor() as usize).max(1);
                    if 3 * count >= m && !a.attack_demo {
                        continue;
                    }
                    let coord = self.table.coordinator(k);
                    let mut pool: Vec<NodeId> = self.table.members(k).into_iter().filter(|n| Some(*n) != coord).collect();
                    pool.shuffle(&mut self.rng);
                    self.byzantine.extend(pool.into_iter().take(count));
                }
            }
            AdversaryKind::Churn => {
                let count = (a.fraction * self.config.scenario.n as f64).floor() as usize;
                let coords: BTreeSet<NodeId> = self.table.global_committee().into_iter().collect();
                let mut pool: Vec<NodeId> = self.table.nodes().filter(|n| !coords.contains(n)).collect();
                pool.shuffle(&mut self.rng);
                self.adversarial.extend(pool.into_iter().take(count));
                self.initial_adversarial = self.adversarial.len();
            }
            _ => {}
        }
    }

    fn seed_schedule(&mut self, nodes: BTreeSet<NodeId>) {
        let sc = self.config.scenario.clone();
        let mut order: Vec<NodeId> = nodes.into_iter().collect();
        order.shuffle(&mut self.rng);
        if self.config.injection_end() > 0 {
            self.schedule.push(0, SimEventKind::TxInject);
        }
        for n in order {
            let phase = self.rng.random_range(0..sc.sync_interval);
            self.schedule.push(phase, SimEventKind::GossipInitiate(n));
            self.scheduled.insert(n);
        }
        if sc.consensus_interval <= sc.duration {
            self.schedule.push(sc.consensus_interval, SimEventKind::Consensus);
        }
        for [tick, node] in &self.config.script.leave {
            self.schedule.push(*tick, SimEventKind::Leave(NodeId(*node as u32)));
        }
        for tick in &self.config.script.join {
            self.schedule.push(*tick, SimEventKind::Join);
        }
        let a = &self.config.adversary;
        match a.kind {
            AdversaryKind::Equivocator | AdversaryKind::Churn => {
                if a.start < self.adversary_stop() {
                    self.schedule.push(a.start, SimEventKind::AdversaryAct);
                }
            }
            AdversaryKind::ShardFailure => {
                let k = CommitteeId(a.failed_committee);
                self.schedule.push(a.fail_at, SimEventKind::FailShard(k));
                if let Some(r) = a.recover_at {
                    self.schedule.push(r, SimEventKind::RecoverShard(k));
                }
            }
            AdversaryKind::None => {}
        }
    }

    fn adversary_stop(&self) -> Tick {
        self.config.adversary.stop.unwrap_or(self.config.injection_end())
    }

    pub fn table(&self) -> &CommitteeTable {
        &self.table
    }

    pub fn state(&self) -> &ShardState {
        &self.state
    }

    pub fn now(&self) -> Tick {
        self.now
    }

    /// Process every scheduled event up to the horizon, then build the report.
    pub fn run(mut self) -> Result<RunReport, SimError> {
        let end = self.config.scenario.duration;
        while let Some(ev) = self.schedule.pop() {
            if ev.at > end {
                break;
            }
            self.now = ev.at;
            let index = self.processed;
            self.processed += 1;
            *self.by_kind.entry(ev.kind.label().to_string()).or_default() += 1;
            let tick = self.now;
            let wrap = |e: SimError| match e {
                SimError::Invariant { .. } => e,
                other => SimError::Invariant {
                    event_index: index,
                    tick,
                    message: other.to_string(),
                },
            };
            self.handle(ev.kind).map_err(wrap)?;
            if self.config.audit.invariants {
                self.state.check(&self.table).map_err(|e| wrap(e.into()))?;
            }
        }
        self.now = end;
        let index = self.processed;
        self.consensus_step().map_err(|e| SimError::Invariant {
            event_index: index,
            tick: end,
            message: e.to_string(),
        })?;
        self.finish()
    }

    fn handle(&mut self, kind: SimEventKind) -> Result<(), SimError> {
        match kind {
            SimEventKind::GossipInitiate(node) => self.gossip(node),
            SimEventKind::TxInject => self.inject(),
            SimEventKind::Consensus => {
                self.consensus_step()?;
                let next = self.now + self.config.scenario.consensus_interval;
                if next < self.config.scenario.duration {
                    self.schedule.push(next, SimEventKind::Consensus);
                }
                Ok(())
            }
            SimEventKind::Checkpoint => self.checkpoint(),
            SimEventKind::Join => {
                let node = self.fresh_node();
                if let Err(e) = self.reconfig.join_node(&mut self.state, &self.table, node, self.now) {
                    self.anomalies.push(format!("join of {node} at {}: {e}", self.now));
                }
                Ok(())
            }
            SimEventKind::Leave(node) => {
                if self.table.committee_of(node).is_none() {
                    self.anomalies.push(format!("leave of inactive {node} at {}", self.now));
                    return Ok(());
                }
                self.leave(node)
            }
            SimEventKind::FailShard(k) => self.fail(k),
            SimEventKind::RecoverShard(k) => self.recover(k),
            SimEventKind::AdversaryAct => self.adversary_act(),
            SimEventKind::Deliver(receiver, committee, delivery) => {
                if self.table.committee_of(receiver) != Some(committee) {
                    return Ok(());
                }
                let pool = delivery.pool;
                if let Some(rep) = self.state.apply_delivery(&self.table, receiver, *delivery, self.now)? {
                    self.recorder.created(pool, &rep.new_event, self.now);
                }
                Ok(())
            }
        }
    }

    fn fresh_node(&mut self) -> NodeId {
        let n = NodeId(self.next_node);
        self.next_node += 1;
        n
    }

    fn gossip(&mut self, node: NodeId) -> Result<(), SimError> {
        if self.table.committee_of(node).is_none() {
            self.scheduled.remove(&node);
            return Ok(());
        }
        let duty = {
            let d = self.duty.entry(node).or_default();
            let v = *d;
            *d += 1;
            v
        };
        match gossip_partner(node, &self.table, duty, &mut self.rng) {
            Ok((pool, partner)) => self.sync(pool, partner, node)?,
            Err(SimError::NoPartner { pool, .. }) => {
                let ev = self.state.solo_event(&self.table, pool, node, self.now)?;
                self.recorder.created(pool, &ev, self.now);
            }
            Err(e) => return Err(e),
        }
        self.schedule
            .push(self.now + self.config.scenario.sync_interval, SimEventKind::GossipInitiate(node));
        Ok(())
    }

    fn sync(&mut self, pool: Pool, sender: NodeId, receiver: NodeId) -> Result<(), SimError> {
        let d = self.state.prepare_delivery(&self.table, pool, sender, receiver)?;
        self.recorder.transfer(pool, sender, receiver, &d.events);
        self.recorder.handshake(sender, receiver);
        let max = self.config.scenario.max_sync_delay;
        let delay = if max > 0 { self.rng.random_range(0..=max) } else { 0 };
        if delay == 0 {
            if let Some(rep) = self.state.apply_delivery(&self.table, receiver, d, self.now)? {
                self.recorder.created(pool, &rep.new_event, self.now);
            }
        } else {
            let committee = self.table.committee_of(receiver).ok_or(SimError::Inactive(receiver))?;
            self.schedule
                .push(self.now + delay, SimEventKind::Deliver(receiver, committee, Box::new(d)));
        }
        Ok(())
    }

    fn inject(&mut self) -> Result<(), SimError> {
        let state = &mut self.state;
        let batch = inject_workload(&self.config.workload, &self.table, self.now, &mut self.rng, || state.next_tx_id());
        for (node, tx) in batch {
            self.recorder.injected(&tx);
            self.txs.insert(
                tx.id,
                TxRecord {
                    tx: tx.clone(),
                    node,
                    ordered_at: None,
                },
            );
            self.state.submit(&self.table, node, tx)?;
        }
        if self.now + 1 < self.config.injection_end() {
            self.schedule.push(self.now + 1, SimEventKind::TxInject);
        }
        Ok(())
    }

    fn leave(&mut self, node: NodeId) -> Result<(), SimError> {
        self.reconfig.leave_node(&mut self.state, &mut self.table, node, self.now)?;
        self.recorder.node_stopped(node);
        self.recorder.note_coordinators(&self.table);
        self.byzantine.remove(&node);
        Ok(())
    }

    fn consensus_step(&mut self) -> Result<(), SimError> {
        self.state.advance_consensus(&self.table, self.now)?;
        loop {
            let batch = self.state.take_ordered();
            if batch.is_empty() {
                break;
            }
            for o in batch {
                self.on_ordered(o)?;
            }
        }
        self.reconfig.check_triggers(&mut self.state, &self.table, self.now);
        self.adopt_new_nodes();
        self.sample_adversary();
        let rounds = self.state.global_decided_rounds();
        if self.table.live_committees().len() > 1
            && rounds >= self.last_checkpoint_round + self.config.protocol.checkpoint_period
        {
            self.last_checkpoint_round = rounds;
            self.schedule.push(self.now, SimEventKind::Checkpoint);
        }
        Ok(())
    }

    fn on_ordered(&mut self, o: OrderedTx) -> Result<(), SimError> {
        if o.tx.kind == TxKind::Transfer {
            if o.scope == Scope::Local(o.tx.target) {
                if let Some(rec) = self.txs.get_mut(&o.tx.id) {
                    if rec.ordered_at.is_none() {
                        rec.ordered_at = Some(self.now);
                        self.recorder.ordered(o.tx.target);
                        if rec.tx.is_cross() {
                            self.recorder.cross_latency(self.now - rec.tx.injected_at);
                        }
                    }
                }
            }
            return Ok(());
        }
        self.reconfig.on_ordered(&mut self.state, &mut self.table, &o, self.now)?;
        self.recorder.note_coordinators(&self.table);
        self.adopt_new_nodes();
        Ok(())
    }

    fn adopt_new_nodes(&mut self) {
        let fresh: Vec<NodeId> = self.table.nodes().filter(|n| !self.scheduled.contains(n)).collect();
        for n in fresh {
            self.scheduled.insert(n);
            self.recorder.node_started(n, self.now);
            self.schedule.push(self.now + 1, SimEventKind::GossipInitiate(n));
        }
    }

    fn checkpoint(&mut self) -> Result<(), SimError> {
        let mut units = 0;
        for k in self.table.live_committees() {
            units += self.state.replicate_checkpoint(&self.table, k, self.now)?;
        }
        let replica_counts = self
            .table
            .live_committees()
            .into_iter()
            .map(|k| (k, self.state.replica_count(&self.table, k)))
            .collect();
        self.checkpoints.push(CheckpointRecord {
            at: self.now,
            global_round: self.last_checkpoint_round,
            units_sent: units,
            replica_counts,
        });
        self.last_checkpoint_at = Some(self.now);
        Ok(())
    }

    fn sample_adversary(&mut self) {
        if self.config.adversary.kind != AdversaryKind::Churn {
            return;
        }
        let mut worst: f64 = 0.0;
        for k in self.table.live_committees() {
            let members = self.table.members(k);
            let adv = members.iter().filter(|n| self.adversarial.contains(n)).count();
            worst = worst.max(adv as f64 / members.len() as f64);
        }
        self.adv_samples += 1;
        if worst < 1.0 / 3.0 {
            self.adv_below += 1;
        }
        self.adv_max = self.adv_max.max(worst);
    }

    fn log_action(&mut self, action: &str, node: Option<NodeId>, committee: Option<CommitteeId>, detail: String) {
        self.actions.push(AdversaryAction {
            at: self.now,
            action: action.to_string(),
            node,
            committee,
            detail,
        });
    }

    fn adversary_act(&mut self) -> Result<(), SimError> {
        match self.config.adversary.kind {
            AdversaryKind::Equivocator => {
                let byz: Vec<NodeId> = self.byzantine.iter().copied().collect();
                for b in byz {
                    let Some(k) = self.table.committee_of(b) else { continue };
                    let honest: Vec<NodeId> = self
                        .table
                        .members(k)
                        .into_iter()
                        .filter(|n| *n != b && !self.byzantine.contains(n))
                        .collect();
                    if honest.len() < 2 {
                        continue;
                    }
                    let i = self.rng.random_range(0..honest.len());
                    let mut j = self.rng.random_range(0..honest.len() - 1);
                    if j >= i {
                        j += 1;
                    }
                    let (first, second) = (honest[i], honest[j]);
                    let (r1, r2) = self.state.equivocate(&self.table, b, first, second, self.now)?;
                    self.recorder.transfer(Pool::Local, b, first, &r1.inserted);
                    self.recorder.transfer(Pool::Local, b, second, &r2.inserted);
                    self.recorder.created(Pool::Local, &r1.new_event, self.now);
                    self.recorder.created(Pool::Local, &r2.new_event, self.now);
                    self.log_action("equivocate", Some(b), Some(k), format!("forks shown to {first} and {second}"));
                }
            }
            AdversaryKind::Churn => {
                let live = self.table.live_committees();
                let target = live
                    .iter()
                    .copied()
                    .max_by_key(|k| {
                        let c = self.table.members(*k).iter().filter(|n| self.adversarial.contains(n)).count();
                        (c, std::cmp::Reverse(k.0))
                    });
                if let Some(target) = target {
                    let movable: Vec<NodeId> = self
                        .adversarial
                        .iter()
                        .copied()
                        .filter(|n| {
                            self.table.committee_of(*n).is_some_and(|k| k != target) && !self.table.is_coordinator(*n)
                        })
                        .collect();
                    if movable.is_empty() {
                        self.log_action("idle", None, Some(target), "no adversarial node outside the target".into());
                    } else {
                        let leaver = movable[self.rng.random_range(0..movable.len())];
                        self.leave(leaver)?;
                        self.adversarial.remove(&leaver);
                        let joiner = self.fresh_node();
                        self.adversarial.insert(joiner);
                        self.reconfig.join_node(&mut self.state, &self.table, joiner, self.now)?;
                        self.log_action(
                            "cycle_identity",
                            Some(leaver),
                            Some(target),
                            format!("left and rejoined as {joiner}"),
                        );
                    }
                }
            }
            _ => {}
        }
        let next = self.now + self.config.adversary.interval;
        if next < self.adversary_stop() {
            self.schedule.push(next, SimEventKind::AdversaryAct);
        }
        Ok(())
    }

    fn fail(&mut self, k: CommitteeId) -> Result<(), SimError> {
        if self.table.is_failed(k) {
            self.anomalies.push(format!("committee {k} failed twice"));
            return Ok(());
        }
        let members = self.table.members(k);
        let archive = self.state.archive();
        let at_risk: Vec<TxId> = self
            .txs
            .iter()
            .filter(|(id, r)| r.tx.origin == k && !archive.contains_key(id))
            .map(|(id, _)| *id)
            .collect();
        self.at_risk.extend(at_risk);
        let ledger_len = self.state.fail_committee(&mut self.table, k, self.now)?;
        for m in &members {
            self.recorder.node_stopped(*m);
            self.scheduled.remove(m);
            self.byzantine.remove(m);
        }
        self.failures.push(FailureRecord {
            at: self.now,
            committee: k,
            members: members.clone(),
            ledger_len,
            last_checkpoint: self.last_checkpoint_at,
        });
        self.log_action("fail_shard", None, Some(k), format!("{} members stopped", members.len()));
        Ok(())
    }

    fn recover(&mut self, k: CommitteeId) -> Result<(), SimError> {
        let size = self
            .config
            .adversary
            .replacements
            .map(|r| r as usize)
            .or_else(|| self.failures.iter().rev().find(|f| f.committee == k).map(|f| f.members.len()))
            .unwrap_or(1)
            .max(1);
        let fresh: BTreeSet<NodeId> = (0..size).map(|_| self.fresh_node()).collect();
        let rep = self.state.recover_failed_shard(&mut self.table, k, &fresh, self.now)?;
        self.log_action(
            "recover_shard",
            Some(rep.replica_holder),
            Some(k),
            format!("restored {} ordered transactions", rep.checkpoint_len),
        );
        self.recoveries.push(rep);
        self.recorder.note_coordinators(&self.table);
        self.adopt_new_nodes();
        Ok(())
    }

    fn agreement(&self, observer: &Hashgraph, views: Vec<&Hashgraph>) -> AgreementCheck {
        let reference: ConsensusOrder = observer.clone().consensus_order();
        let mut check = AgreementCheck {
            views_checked: 0,
            consistent: true,
            shortest: reference.len(),
            longest: reference.len(),
        };
        for v in views {
            let order = v.clone().consensus_order();
            check.views_checked += 1;
            check.consistent &= order.consistent_with(&reference);
            check.shortest = check.shortest.min(order.len());
            check.longest = check.longest.max(order.len());
        }
        check
    }

    fn finish(mut self) -> Result<RunReport, SimError> {
        let duration = self.config.scenario.duration;
        let audit_agreement = self.config.audit.agreement;
        let mut committees = Vec::new();
        let mut forks = Vec::new();
        let mut all_agree = true;
        for k in self.table.committees() {
            let failed = self.table.is_failed(k);
            let members = self.table.members(k);
            let agreement = match (audit_agreement && !failed, self.state.observer(k)) {
                (true, Some(obs)) => {
                    let views = members
                        .iter()
                        .filter(|m| !self.byzantine.contains(m))
                        .filter_map(|m| self.state.view(*m))
                        .collect();
                    let a = self.agreement(obs, views);
                    all_agree &= a.consistent;
                    Some(a)
                }
                _ => None,
            };
            if let Some(obs) = self.state.observer(k) {
                for (creator, first, second) in obs.detect_forks() {
                    forks.push(ForkEvidence {
                        committee: Some(k),
                        creator,
                        first,
                        second,
                    });
                }
            }
            let ledger = self.state.ledger(k);
            committees.push(CommitteeSnapshot {
                committee: k,
                failed,
                epoch: self.state.local_epoch(k),
                byzantine: members.iter().filter(|m| self.byzantine.contains(m)).copied().collect(),
                coordinator: self.table.coordinator(k),
                ledger_len: ledger.map(|l| l.len()).unwrap_or(0),
                ordered_events: ledger.map(|l| l.ordered_events()).unwrap_or(0),
                ledger_digest: ledger.map(|l| l.digest()).unwrap_or_default(),
                duplicates: ledger.map(|l| l.duplicates().len()).unwrap_or(0),
                agreement,
                queue: self.state.queue(k).map(|q| q.snapshot()),
                replica_holders: self.state.replica_holders(&self.table, k),
                members,
            });
        }
        let coords = self.table.global_committee();
        let global_agreement = if audit_agreement {
            let views = coords.iter().filter_map(|c| self.state.global_view(*c)).collect();
            let a = self.agreement(self.state.global_observer(), views);
            all_agree &= a.consistent;
            Some(a)
        } else {
            None
        };
        for (creator, first, second) in self.state.global_observer().detect_forks() {
            forks.push(ForkEvidence {
                committee: None,
                creator,
                first,
                second,
            });
        }
        let gl = self.state.global_ledger();
        let global = GlobalSnapshot {
            epoch: self.state.global_epoch(),
            members: coords,
            ledger_len: gl.len(),
            ordered_events: gl.ordered_events(),
            ledger_digest: gl.digest(),
            agreement: global_agreement,
        };

        let mut summary = RunSummary {
            events_processed: self.processed,
            events_by_kind: self.by_kind.clone(),
            final_tick: self.now,
            agreement_checked: audit_agreement,
            honest_orders_agree: all_agree,
            partition_ok: self.state.check(&self.table).is_ok(),
            attack_demo: self.config.adversary.attack_demo,
            ..Default::default()
        };
        let mut audit = Vec::with_capacity(self.txs.len());
        for (id, rec) in &self.txs {
            let tx = &rec.tx;
            let count = match self.state.ledger(tx.target) {
                Some(l) => l.contains(*id) as usize + l.duplicates().iter().filter(|d| *d == id).count(),
                None => 0,
            };
            let status = match count {
                1 => "ordered",
                0 if self.at_risk.contains(id) => "lost_at_failure",
                0 => "missing",
                _ => "duplicated",
            };
            summary.injected += 1;
            if tx.is_cross() {
                summary.injected_cross += 1;
                if status != "lost_at_failure" {
                    summary.audited_cross += 1;
                }
                match status {
                    "ordered" => summary.cross_exactly_once += 1,
                    "missing" => summary.cross_missing += 1,
                    "duplicated" => summary.cross_duplicated += 1,
                    _ => summary.lost_at_failure += 1,
                }
            } else {
                match status {
                    "ordered" => summary.intra_ordered += 1,
                    "lost_at_failure" => summary.lost_at_failure += 1,
                    _ => summary.intra_missing += 1,
                }
            }
            audit.push(TxAuditRow {
                tx: *id,
                class: if tx.is_cross() { "cross" } else { "intra" },
                origin: tx.origin,
                target: tx.target,
                node: rec.node,
                injected_at: tx.injected_at,
                ordered_count: count,
                status,
            });
        }
        for v in self.state.violations() {
            self.anomalies.push(v.clone());
        }

        let sc = &self.config.scenario;
        let adversary = AdversaryReport {
            kind: self.config.adversary.kind,
            fraction: self.config.adversary.fraction,
            attack_demo: self.config.adversary.attack_demo,
            byzantine: self.byzantine.iter().copied().collect(),
            adversarial: self.adversarial.iter().copied().collect(),
            actions: std::mem::take(&mut self.actions),
            samples: self.adv_samples,
            samples_below_third: self.adv_below,
            max_fraction: self.adv_max,
            binomial_prediction: (self.config.adversary.kind == AdversaryKind::Churn).then(|| {
                binomial_safety_prediction(
                    (sc.n / sc.s) as u64,
                    sc.s as u64,
                    self.initial_adversarial as f64 / sc.n as f64,
                )
            }),
        };
        let metrics = self.recorder.clone().finish(duration, &self.table, &self.state);
        summary.empty_event_fraction = metrics.empty_event_fraction;
        let comparison = compare_measured(
            &metrics,
            &ComparisonParams {
                n: sc.n as u64,
                s: sc.s as u64,
                tolerance: self.config.metrics.tolerance,
            },
        );
        Ok(RunReport {
            summary,
            metrics,
            comparison,
            committees,
            global,
            forks,
            reorg_log: self.reconfig.log().to_vec(),
            adversary,
            checkpoints: self.checkpoints,
            failures: self.failures,
            recoveries: self.recoveries,
            anomalies: self.anomalies,
            tx_audit: audit,
            config: self.config,
        })
    }
}
