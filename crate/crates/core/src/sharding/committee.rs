use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ShardingError;
use crate::ids::{CommitteeId, NodeId};

/// Node-to-committee assignment and the coordinator of each committee.
///
/// The Global Committee is exactly the set of coordinators of committees that
/// have not failed.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommitteeTable {
    shard_count: u32,
    assignment: BTreeMap<NodeId, CommitteeId>,
    coordinators: BTreeMap<CommitteeId, NodeId>,
    failed: BTreeSet<CommitteeId>,
    pub epoch: u64,
}

/// Randomly split `nodes` into `s` committees whose sizes differ by at most
/// one, and pick a uniformly random coordinator in each.
pub fn partition_nodes(nodes: &BTreeSet<NodeId>, s: u32, seed: u64) -> Result<CommitteeTable, ShardingError> {
    if s == 0 {
        return Err(ShardingError::NoShards);
    }
    if nodes.len() < s as usize {
        return Err(ShardingError::TooFewNodes {
            nodes: nodes.len(),
            shards: s,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<NodeId> = nodes.iter().copied().collect();
    order.shuffle(&mut rng);
    let mut table = CommitteeTable {
        shard_count: s,
        assignment: BTreeMap::new(),
        coordinators: BTreeMap::new(),
        failed: BTreeSet::new(),
        epoch: 0,
    };
    for (i, node) in order.into_iter().enumerate() {
        table.assignment.insert(node, CommitteeId((i % s as usize) as u32));
    }
    for k in 0..s {
        let members = table.members(CommitteeId(k));
        let pick = members[rng.random_range(0..members.len())];
        table.coordinators.insert(CommitteeId(k), pick);
    }
    Ok(table)
}

impl CommitteeTable {
    pub fn shard_count(&self) -> u32 {
        self.shard_count
    }

    pub fn committees(&self) -> impl Iterator<Item = CommitteeId> {
        (0..self.shard_count).map(CommitteeId)
    }

    pub fn live_committees(&self) -> Vec<CommitteeId> {
        self.committees().filter(|k| !self.failed.contains(k)).collect()
    }

    pub fn committee_of(&self, node: NodeId) -> Option<CommitteeId> {
        self.assignment.get(&node).copied()
    }

    pub fn coordinator(&self, committee: CommitteeId) -> Option<NodeId> {
        self.coordinators.get(&committee).copied()
    }

    pub fn is_coordinator(&self, node: NodeId) -> bool {
        self.committee_of(node)
            .is_some_and(|k| self.coordinators.get(&k) == Some(&node))
    }

    /// Members of `committee`, sorted by id.
    pub fn members(&self, committee: CommitteeId) -> Vec<NodeId> {
        self.assignment
            .iter()
            .filter(|(_, k)| **k == committee)
            .map(|(n, _)| *n)
            .collect()
    }

    pub fn size(&self, committee: CommitteeId) -> usize {
        self.assignment.values().filter(|k| **k == committee).count()
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.assignment.keys().copied()
    }

    pub fn node_count(&self) -> usize {
        self.assignment.len()
    }

    /// Coordinators of live committees, sorted by node id.
    pub fn global_committee(&self) -> Vec<NodeId> {
        let mut out: Vec<NodeId> = self
            .coordinators
            .iter()
            .filter(|(k, _)| !self.failed.contains(k))
            .map(|(_, n)| *n)
            .collect();
        out.sort();
        out
    }

    pub fn is_failed(&self, committee: CommitteeId) -> bool {
        self.failed.contains(&committee)
    }

    pub(crate) fn assign(&mut self, node: NodeId, committee: CommitteeId) {
        self.assignment.insert(node, committee);
        self.epoch += 1;
    }

    pub(crate) fn remove(&mut self, node: NodeId) -> Option<CommitteeId> {
        self.epoch += 1;
        self.assignment.remove(&node)
    }

    pub(crate) fn set_coordinator(&mut self, committee: CommitteeId, node: NodeId) {
        self.coordinators.insert(committee, node);
        self.epoch += 1;
    }

    pub(crate) fn mark_failed(&mut self, committee: CommitteeId) {
        self.failed.insert(committee);
        self.coordinators.remove(&committee);
        self.assignment.retain(|_, k| *k != committee);
        self.epoch += 1;
    }

    pub(crate) fn clear_failed(&mut self, committee: CommitteeId) {
        self.failed.remove(&committee);
    }

    /// Partition, coordinator, and Global Committee invariants.
    pub fn check(&self) -> Result<(), ShardingError> {
        for k in self.committees() {
            let members = self.members(k);
            if self.failed.contains(&k) {
                if !members.is_empty() || self.coordinators.contains_key(&k) {
                    return Err(ShardingError::Invariant(format!("failed committee {k} still has members")));
                }
                continue;
            }
            if members.is_empty() {
                return Err(ShardingError::Invariant(format!("committee {k} is empty")));
            }
            match self.coordinators.get(&k) {
                Some(c) if members.contains(c) => {}
                Some(c) => {
                    return Err(ShardingError::Invariant(format!("coordinator {c} of {k} is not a member")))
                }
                None => return Err(ShardingError::Invariant(format!("committee {k} has no coordinator"))),
            }
        }
        for k in self.assignment.values() {
            if k.0 >= self.shard_count {
                return Err(ShardingError::Invariant(format!("assignment to unknown committee {k}")));
            }
        }
        if self.global_committee().len() != self.live_committees().len() {
            return Err(ShardingError::Invariant("global committee size differs from live shard count".into()));
        }
        Ok(())
    }
}
