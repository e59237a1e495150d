use rand::Rng;
use rand_distr::{Distribution, Poisson};

use super::config::WorkloadSection;
use super::SimError;
use crate::ids::{CommitteeId, NodeId, Tick, TxId};
use crate::sharding::{CommitteeTable, Pool};
use crate::tx::Transaction;

/// Pick who `node` syncs with. Coordinators use the Global Committee pool on
/// odd duty ticks and their own committee otherwise; with a single committee
/// there is no one to meet in the global pool, so they stay local.
pub fn gossip_partner<R: Rng>(
    node: NodeId,
    table: &CommitteeTable,
    duty_tick: u64,
    rng: &mut R,
) -> Result<(Pool, NodeId), SimError> {
    let k = table.committee_of(node).ok_or(SimError::Inactive(node))?;
    let global_open = table.live_committees().len() > 1;
    let pool = if global_open && table.coordinator(k) == Some(node) && duty_tick % 2 == 1 {
        Pool::Global
    } else {
        Pool::Local
    };
    let candidates: Vec<NodeId> = match pool {
        Pool::Local => table.members(k),
        Pool::Global => table.global_committee(),
    }
    .into_iter()
    .filter(|n| *n != node)
    .collect();
    if candidates.is_empty() {
        return Err(SimError::NoPartner { node, pool });
    }
    Ok((pool, candidates[rng.random_range(0..candidates.len())]))
}

/// Poisson arrivals for one tick. Each transaction lands at a uniform active
/// node; it targets another committee, chosen uniformly, with probability
/// `cross_ratio`.
pub fn inject_workload<R: Rng>(
    workload: &WorkloadSection,
    table: &CommitteeTable,
    now: Tick,
    rng: &mut R,
    mut next_id: impl FnMut() -> TxId,
) -> Vec<(NodeId, Transaction)> {
    if workload.tx_rate <= 0.0 || table.node_count() == 0 {
        return Vec::new();
    }
    let count = Poisson::new(workload.tx_rate).expect("positive rate").sample(rng) as u64;
    let nodes: Vec<NodeId> = table.nodes().collect();
    let s = table.shard_count();
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let node = nodes[rng.random_range(0..nodes.len())];
        let origin = table.committee_of(node).expect("listed node");
        let target = if s > 1 && rng.random::<f64>() < workload.cross_ratio {
            let pick = rng.random_range(0..s - 1);
            CommitteeId(if pick >= origin.0 { pick + 1 } else { pick })
        } else {
            origin
        };
        out.push((node, Transaction::transfer(next_id(), origin, target, now)));
    }
    out
}
