//! Joins, leaves, committee reorganization and coordinator reselection.
//!
//! Every random choice comes from the consensus timestamp of the control
//! transaction that requested it, so all honest nodes reach the same outcome.

mod draw;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

pub use draw::RandomnessDraw;

use crate::ids::{CommitteeId, NodeId, Tick, TxId};
use crate::sharding::{CommitteeTable, OrderedTx, Pool, RemoveOutcome, Scope, ShardState, ShardingError};
use crate::tx::{Transaction, TxKind};

#[derive(Debug, thiserror::Error)]
pub enum ReconfigError {
    #[error("{0} is already a member or has a join pending")]
    AlreadyJoined(NodeId),
    #[error("no live coordinator can submit the request")]
    NoCoordinator,
    #[error(transparent)]
    Sharding(#[from] ShardingError),
}

/// When a committee counts as depleted.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TriggerMode {
    /// More than half of the committee's post-reorganization size has left.
    #[default]
    CommitteeFraction,
    /// More than half the shard count has left the committee.
    #[serde(rename = "literal-s-over-2")]
    ShardCount,
}

/// Departures per committee since its last reorganization.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChurnLedger {
    pub exits: BTreeMap<CommitteeId, u32>,
    pub baseline: BTreeMap<CommitteeId, usize>,
}

impl ChurnLedger {
    pub fn from_table(table: &CommitteeTable) -> Self {
        ChurnLedger {
            exits: table.committees().map(|k| (k, 0)).collect(),
            baseline: table.committees().map(|k| (k, table.size(k))).collect(),
        }
    }

    pub fn exits(&self, committee: CommitteeId) -> u32 {
        self.exits.get(&committee).copied().unwrap_or(0)
    }

    pub fn baseline(&self, committee: CommitteeId) -> usize {
        self.baseline.get(&committee).copied().unwrap_or(0)
    }
}

pub fn check_reorg_trigger(churn: &ChurnLedger, committee: CommitteeId, mode: TriggerMode, shard_count: u32) -> bool {
    let exits = churn.exits(committee) as u64;
    match mode {
        TriggerMode::CommitteeFraction => 2 * exits > churn.baseline(committee) as u64,
        TriggerMode::ShardCount => 2 * exits > shard_count as u64,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DecisionKind {
    /// Candidates are committee ids; picks the joiner's committee.
    Join,
    /// Candidates are committee ids; picks donors for a depleted committee.
    Donors,
    /// Candidates are node ids; picks members a donor hands over.
    Split,
    /// Candidates are node ids; picks a committee's coordinator.
    Reselect,
}

/// One randomized decision, with everything needed to recompute it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReorgRecord {
    pub at: Tick,
    pub kind: DecisionKind,
    pub committee: CommitteeId,
    pub draw: RandomnessDraw,
    pub candidates: Vec<u32>,
    pub count: usize,
    pub chosen: Vec<u32>,
}

impl ReorgRecord {
    /// Recompute the choice from the logged timestamp and candidates.
    pub fn recompute(&self) -> Vec<u32> {
        let draw = RandomnessDraw::new(self.draw.source_tx, self.draw.consensus_timestamp);
        match self.kind {
            DecisionKind::Join | DecisionKind::Reselect => {
                if self.candidates.is_empty() {
                    Vec::new()
                } else {
                    vec![self.candidates[draw.index(self.candidates.len())]]
                }
            }
            DecisionKind::Donors | DecisionKind::Split => draw.choose(&self.candidates, self.count),
        }
    }
}

/// Index of the first record whose choice does not match its recomputation.
pub fn replay(log: &[ReorgRecord]) -> Result<(), usize> {
    match log.iter().position(|r| r.recompute() != r.chosen) {
        Some(i) => Err(i),
        None => Ok(()),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReconfigConfig {
    pub trigger_mode: TriggerMode,
    pub donor_count: usize,
    pub min_committee_size: usize,
}

impl Default for ReconfigConfig {
    fn default() -> Self {
        ReconfigConfig {
            trigger_mode: TriggerMode::CommitteeFraction,
            donor_count: 2,
            min_committee_size: 4,
        }
    }
}

#[derive(Clone, Debug, Default)]
struct Reorg {
    awaiting: BTreeSet<CommitteeId>,
    donors: Vec<CommitteeId>,
    requested: bool,
}

/// Drives membership changes through consensus.
#[derive(Clone, Debug)]
pub struct Reconfigurator {
    config: ReconfigConfig,
    churn: ChurnLedger,
    pending_joins: BTreeMap<NodeId, TxId>,
    reorgs: BTreeMap<CommitteeId, Reorg>,
    deferred: BTreeSet<CommitteeId>,
    log: Vec<ReorgRecord>,
    completed_reorgs: usize,
}

impl Reconfigurator {
    pub fn new(config: ReconfigConfig, table: &CommitteeTable) -> Self {
        Reconfigurator {
            config,
            churn: ChurnLedger::from_table(table),
            pending_joins: BTreeMap::new(),
            reorgs: BTreeMap::new(),
            deferred: BTreeSet::new(),
            log: Vec::new(),
            completed_reorgs: 0,
        }
    }

    pub fn config(&self) -> &ReconfigConfig {
        &self.config
    }

    pub fn churn(&self) -> &ChurnLedger {
        &self.churn
    }

    pub fn log(&self) -> &[ReorgRecord] {
        &self.log
    }

    pub fn pending_joins(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.pending_joins.keys().copied()
    }

    pub fn reorg_in_progress(&self, committee: CommitteeId) -> bool {
        self.reorgs.contains_key(&committee)
    }

    pub fn completed_reorgs(&self) -> usize {
        self.completed_reorgs
    }

    /// Ask the Global Committee to place `node`. The request is sent by the
    /// live coordinator with the lowest id.
    pub fn join_node(
        &mut self,
        state: &mut ShardState,
        table: &CommitteeTable,
        node: NodeId,
        now: Tick,
    ) -> Result<TxId, ReconfigError> {
        if table.committee_of(node).is_some() || self.pending_joins.contains_key(&node) {
            return Err(ReconfigError::AlreadyJoined(node));
        }
        let sender = *table.global_committee().first().ok_or(ReconfigError::NoCoordinator)?;
        let k = table.committee_of(sender).ok_or(ReconfigError::NoCoordinator)?;
        let id = state.next_tx_id();
        state.submit_control(Pool::Global, k, Transaction::control(id, k, TxKind::Join { node }, now));
        self.pending_joins.insert(node, id);
        Ok(id)
    }

    /// Remove `node` at once and count the exit against its committee. A
    /// departing coordinator triggers a reselection.
    pub fn leave_node(
        &mut self,
        state: &mut ShardState,
        table: &mut CommitteeTable,
        node: NodeId,
        now: Tick,
    ) -> Result<RemoveOutcome, ReconfigError> {
        let out = state.remove_member(table, node, now)?;
        *self.churn.exits.entry(out.committee).or_default() += 1;
        if out.was_coordinator && !out.committee_emptied {
            self.reselect_coordinator(state, table, out.committee, now);
        }
        if out.committee_emptied {
            self.reorgs.remove(&out.committee);
        }
        self.check_triggers(state, table, now);
        Ok(out)
    }

    /// Request a coordinator reselection in `committee`.
    pub fn reselect_coordinator(&mut self, state: &mut ShardState, table: &CommitteeTable, committee: CommitteeId, now: Tick) {
        if table.is_failed(committee) {
            return;
        }
        let id = state.next_tx_id();
        state.submit_control(Pool::Local, committee, Transaction::control(id, committee, TxKind::Reselect, now));
    }

    /// Request donors for a depleted committee.
    pub fn reorganize_committee(
        &mut self,
        state: &mut ShardState,
        table: &CommitteeTable,
        depleted: CommitteeId,
        now: Tick,
    ) -> bool {
        if table.is_failed(depleted) || self.reorgs.contains_key(&depleted) {
            return false;
        }
        let id = state.next_tx_id();
        state.submit_control(
            Pool::Global,
            depleted,
            Transaction::control(id, depleted, TxKind::Reorg { depleted }, now),
        );
        self.reorgs.insert(
            depleted,
            Reorg {
                requested: true,
                ..Default::default()
            },
        );
        true
    }

    /// Start a reorganization for every committee whose trigger fires.
    pub fn check_triggers(&mut self, state: &mut ShardState, table: &CommitteeTable, now: Tick) {
        for k in table.live_committees() {
            if self.deferred.contains(&k) {
                continue;
            }
            if check_reorg_trigger(&self.churn, k, self.config.trigger_mode, table.shard_count()) {
                self.reorganize_committee(state, table, k, now);
            }
        }
    }

    fn record(&mut self, at: Tick, kind: DecisionKind, committee: CommitteeId, draw: RandomnessDraw, candidates: Vec<u32>, count: usize, chosen: Vec<u32>) -> ReorgRecord {
        let r = ReorgRecord {
            at,
            kind,
            committee,
            draw,
            candidates,
            count,
            chosen,
        };
        self.log.push(r.clone());
        r
    }

    /// Act on a control transaction that just reached consensus.
    pub fn on_ordered(
        &mut self,
        state: &mut ShardState,
        table: &mut CommitteeTable,
        ordered: &OrderedTx,
        now: Tick,
    ) -> Result<Option<ReorgRecord>, ReconfigError> {
        let draw = RandomnessDraw::new(ordered.tx.id, ordered.consensus_timestamp);
        match (ordered.scope, &ordered.tx.kind) {
            (Scope::Global, TxKind::Join { node }) => {
                if self.pending_joins.get(node) != Some(&ordered.tx.id) {
                    return Ok(None);
                }
                let live = table.live_committees();
                if live.is_empty() {
                    return Ok(None);
                }
                self.pending_joins.remove(node);
                let target = live[draw.index(live.len())];
                state.add_member(table, *node, target, now)?;
                self.deferred.clear();
                let ids = live.iter().map(|k| k.0).collect();
                Ok(Some(self.record(now, DecisionKind::Join, target, draw, ids, 1, vec![target.0])))
            }
            (Scope::Global, TxKind::Reorg { depleted }) => {
                let depleted = *depleted;
                if !self.reorgs.get(&depleted).is_some_and(|r| r.requested && r.donors.is_empty()) {
                    return Ok(None);
                }
                if table.is_failed(depleted) {
                    self.reorgs.remove(&depleted);
                    return Ok(None);
                }
                let busy: BTreeSet<CommitteeId> = self
                    .reorgs
                    .iter()
                    .flat_map(|(k, r)| std::iter::once(*k).chain(r.donors.iter().copied()))
                    .collect();
                let candidates: Vec<CommitteeId> = table
                    .live_committees()
                    .into_iter()
                    .filter(|k| !busy.contains(k) && table.size(*k) > self.config.min_committee_size)
                    .collect();
                let k = self.config.donor_count.min(candidates.len());
                let chosen = draw.choose(&candidates, k);
                let needed = self.churn.baseline(depleted).saturating_sub(table.size(depleted));
                let share = needed.div_ceil(k.max(1));
                let mut remaining = needed;
                let mut reorg = Reorg {
                    requested: true,
                    ..Default::default()
                };
                for &d in &chosen {
                    let spare = table.size(d).saturating_sub(self.config.min_committee_size);
                    let count = share.min(spare).min(remaining);
                    if count == 0 {
                        continue;
                    }
                    remaining -= count;
                    let id = state.next_tx_id();
                    state.submit_control(
                        Pool::Local,
                        d,
                        Transaction::control(id, d, TxKind::Split { depleted, count: count as u32 }, now),
                    );
                    reorg.awaiting.insert(d);
                }
                reorg.donors = chosen.clone();
                let rec = self.record(
                    now,
                    DecisionKind::Donors,
                    depleted,
                    draw,
                    candidates.iter().map(|k| k.0).collect(),
                    k,
                    chosen.iter().map(|k| k.0).collect(),
                );
                if chosen.is_empty() {
                    self.reorgs.remove(&depleted);
                    self.deferred.insert(depleted);
                } else if reorg.awaiting.is_empty() {
                    self.reorgs.insert(depleted, reorg);
                    self.finish(state, table, depleted, now);
                } else {
                    self.reorgs.insert(depleted, reorg);
                }
                Ok(Some(rec))
            }
            (Scope::Local(j), TxKind::Split { depleted, count }) => {
                let depleted = *depleted;
                if !self.reorgs.get(&depleted).is_some_and(|r| r.awaiting.contains(&j)) {
                    return Ok(None);
                }
                if table.is_failed(depleted) || table.is_failed(j) {
                    self.reorgs.remove(&depleted);
                    return Ok(None);
                }
                let coord = table.coordinator(j);
                let candidates: Vec<NodeId> = table.members(j).into_iter().filter(|n| Some(*n) != coord).collect();
                let spare = table.size(j).saturating_sub(self.config.min_committee_size);
                let c = (*count as usize).min(spare).min(candidates.len());
                let chosen = draw.choose(&candidates, c);
                if !chosen.is_empty() {
                    state.move_members(table, &chosen, j, depleted, now)?;
                }
                let rec = self.record(
                    now,
                    DecisionKind::Split,
                    j,
                    draw,
                    candidates.iter().map(|n| n.0).collect(),
                    c,
                    chosen.iter().map(|n| n.0).collect(),
                );
                let done = {
                    let r = self.reorgs.get_mut(&depleted).expect("checked above");
                    r.awaiting.remove(&j);
                    r.awaiting.is_empty()
                };
                if done {
                    self.finish(state, table, depleted, now);
                }
                Ok(Some(rec))
            }
            (Scope::Local(k), TxKind::Reselect) => {
                if table.is_failed(k) {
                    return Ok(None);
                }
                let candidates = table.members(k);
                let pick = candidates[draw.index(candidates.len())];
                state.change_coordinator(table, pick, now)?;
                Ok(Some(self.record(
                    now,
                    DecisionKind::Reselect,
                    k,
                    draw,
                    candidates.iter().map(|n| n.0).collect(),
                    1,
                    vec![pick.0],
                )))
            }
            _ => Ok(None),
        }
    }

    fn finish(&mut self, state: &mut ShardState, table: &CommitteeTable, depleted: CommitteeId, now: Tick) {
        let Some(r) = self.reorgs.remove(&depleted) else {
            return;
        };
        self.churn.exits.insert(depleted, 0);
        self.churn.baseline.insert(depleted, table.size(depleted));
        self.completed_reorgs += 1;
        self.reselect_coordinator(state, table, depleted, now);
        for d in r.donors {
            self.reselect_coordinator(state, table, d, now);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trigger_modes() {
        let mut churn = ChurnLedger::default();
        let k = CommitteeId(0);
        churn.baseline.insert(k, 10);
        churn.exits.insert(k, 5);
        assert!(!check_reorg_trigger(&churn, k, TriggerMode::CommitteeFraction, 10));
        churn.exits.insert(k, 6);
        assert!(check_reorg_trigger(&churn, k, TriggerMode::CommitteeFraction, 10));
        churn.exits.insert(k, 2);
        assert!(check_reorg_trigger(&churn, k, TriggerMode::ShardCount, 3));
        assert!(!check_reorg_trigger(&churn, k, TriggerMode::ShardCount, 4));
    }

    #[test]
    fn replay_catches_tampering() {
        let draw = RandomnessDraw::new(TxId(3), 77);
        let candidates = vec![0, 1, 2, 3, 4];
        let mut rec = ReorgRecord {
            at: 0,
            kind: DecisionKind::Donors,
            committee: CommitteeId(5),
            draw,
            candidates: candidates.clone(),
            count: 2,
            chosen: draw.choose(&candidates, 2).into_iter().collect(),
        };
        assert_eq!(replay(std::slice::from_ref(&rec)), Ok(()));
        rec.chosen.reverse();
        assert_eq!(replay(&[rec]), Err(0));
    }
}
