mod common;

use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use shardgraph::ids::{CommitteeId, NodeId, TxId};
use shardgraph::metrics::analytic_replica_count;
use shardgraph::sharding::{partition_nodes, CommitteeTable, Pool, ShardState, ShardingError};
use shardgraph::sim::{inject_workload, WorkloadSection};
use shardgraph::tx::{classify_transaction, Transaction, TxClass};

fn nodes(n: u32) -> BTreeSet<NodeId> {
    (0..n).map(NodeId).collect()
}

fn setup(n: u32, s: u32, batch: usize) -> (CommitteeTable, ShardState) {
    let table = partition_nodes(&nodes(n), s, 9).unwrap();
    let state = ShardState::new(&table, 10, batch, 0).unwrap();
    (table, state)
}

fn plain_members(table: &CommitteeTable, k: CommitteeId) -> Vec<NodeId> {
    table.members(k).into_iter().filter(|m| !table.is_coordinator(*m)).collect()
}

fn payload_ids(ev: &shardgraph::hashgraph::Event) -> Vec<TxId> {
    ev.payload.iter().map(|t| t.id).collect()
}

/// A plain member of `a` records `tx` in its next event and the coordinator
/// of `a` pulls that event. Returns the coordinator's new local event.
fn hand_to_coordinator(
    table: &CommitteeTable,
    state: &mut ShardState,
    a: CommitteeId,
    tx: Transaction,
) -> std::sync::Arc<shardgraph::hashgraph::Event> {
    let members = plain_members(table, a);
    let (x, y) = (members[0], members[1]);
    state.submit(table, x, tx).unwrap();
    state.sync(table, Pool::Local, y, x, 1).unwrap();
    let coord = table.coordinator(a).unwrap();
    state.sync(table, Pool::Local, x, coord, 2).unwrap().new_event
}

#[test]
fn intra_payload_leaves_queue_alone() {
    let (table, mut state) = setup(9, 3, 16);
    let a = CommitteeId(0);
    let id = state.next_tx_id();
    hand_to_coordinator(&table, &mut state, a, Transaction::transfer(id, a, a, 0));
    assert_eq!(state.queue(a).unwrap().outbound_len(), 0);
}

#[test]
fn cross_payload_is_queued_and_stripped() {
    let (table, mut state) = setup(9, 3, 16);
    let (a, b) = (CommitteeId(0), CommitteeId(1));
    let cross = state.next_tx_id();
    let intra = state.next_tx_id();
    let members = plain_members(&table, a);
    state.submit(&table, members[0], Transaction::transfer(cross, a, b, 0)).unwrap();
    state.submit(&table, members[0], Transaction::transfer(intra, a, a, 0)).unwrap();
    let carrier = state.sync(&table, Pool::Local, members[1], members[0], 1).unwrap().new_event;
    assert_eq!(payload_ids(&carrier), vec![cross, intra]);

    let coord = table.coordinator(a).unwrap();
    let own = state.sync(&table, Pool::Local, members[0], coord, 2).unwrap().new_event;
    let q = state.queue(a).unwrap();
    assert_eq!(q.outbound().map(|t| t.id).collect::<Vec<_>>(), vec![cross]);
    assert!(!payload_ids(&own).contains(&cross));

    // The same event reaching the coordinator again, or along another path,
    // is not queued twice.
    assert_eq!(state.coordinator_ingest_local(&table, a, &carrier.id).unwrap(), 0);
    state.sync(&table, Pool::Local, members[0], members[1], 3).unwrap();
    state.sync(&table, Pool::Local, members[1], coord, 4).unwrap();
    assert_eq!(state.queue(a).unwrap().outbound_len(), 1);
}

#[test]
fn ingest_of_unknown_event_fails() {
    let (table, mut state) = setup(9, 3, 16);
    let bogus = shardgraph::hashgraph::EventId([7; 32]);
    assert!(matches!(
        state.coordinator_ingest_local(&table, CommitteeId(0), &bogus),
        Err(ShardingError::UnknownEvent(_))
    ));
}

#[test]
fn transfer_crosses_the_global_graph_to_its_target_only() {
    let (table, mut state) = setup(9, 3, 16);
    let (a, b, c) = (CommitteeId(0), CommitteeId(1), CommitteeId(2));
    let id = state.next_tx_id();
    hand_to_coordinator(&table, &mut state, a, Transaction::transfer(id, a, b, 0));

    let global = state.coordinator_emit_global(&table, a, 3).unwrap();
    assert_eq!(payload_ids(&global), vec![id]);
    assert_eq!(state.queue(a).unwrap().outbound_len(), 0);

    let (ca, cb, cc) = (
        table.coordinator(a).unwrap(),
        table.coordinator(b).unwrap(),
        table.coordinator(c).unwrap(),
    );
    state.sync(&table, Pool::Global, ca, cb, 4).unwrap();
    state.sync(&table, Pool::Global, ca, cc, 4).unwrap();
    assert_eq!(state.queue(b).unwrap().inbound().map(|t| t.id).collect::<Vec<_>>(), vec![id]);
    assert_eq!(state.queue(c).unwrap().inbound_len(), 0);

    // Receiving the same global event again changes nothing.
    assert_eq!(state.coordinator_receive_global(&table, b, &global.id).unwrap(), 0);
    assert_eq!(state.coordinator_receive_global(&table, c, &global.id).unwrap(), 0);
    assert_eq!(state.queue(b).unwrap().inbound_len(), 1);

    let local = state.coordinator_emit_local(&table, b, 5).unwrap();
    assert_eq!(payload_ids(&local), vec![id]);
    assert_eq!(state.queue(b).unwrap().inbound_len(), 0);
    assert!(state.view(cb).unwrap().contains(&local.id));

    // With nothing queued the coordinator's event is a plain sync.
    let empty = state.coordinator_emit_local(&table, b, 6).unwrap();
    assert!(empty.payload.is_empty());
}

#[test]
fn global_emission_respects_batch_limit() {
    let (table, mut state) = setup(9, 3, 2);
    let (a, b) = (CommitteeId(0), CommitteeId(1));
    let coord = table.coordinator(a).unwrap();
    let ids: Vec<TxId> = (0..5).map(|_| state.next_tx_id()).collect();
    for id in &ids {
        state.submit(&table, coord, Transaction::transfer(*id, a, b, 0)).unwrap();
    }
    assert_eq!(state.queue(a).unwrap().outbound_len(), 5);
    let ev = state.coordinator_emit_global(&table, a, 1).unwrap();
    assert_eq!(payload_ids(&ev), ids[..2].to_vec());
    assert_eq!(
        state.queue(a).unwrap().outbound().map(|t| t.id).collect::<Vec<_>>(),
        ids[2..].to_vec()
    );
}

#[test]
fn local_graphs_are_isolated() {
    let (table, mut state) = setup(9, 3, 16);
    let x = table.members(CommitteeId(0))[0];
    let y = table.members(CommitteeId(1))[0];
    assert!(matches!(
        state.sync(&table, Pool::Local, x, y, 1),
        Err(ShardingError::Isolation { .. })
    ));
}

#[test]
fn replica_count_matches_formula_after_checkpoint() {
    for (n, s) in [(100u32, 10u32), (12, 3), (8, 8), (6, 1)] {
        let (table, mut state) = setup(n, s, 16);
        for k in table.committees() {
            state.replicate_checkpoint(&table, k, 1).unwrap();
        }
        let expected = analytic_replica_count(n as u64, s as u64).unwrap() as usize;
        for k in table.committees() {
            assert_eq!(state.replica_count(&table, k), expected, "n={n} s={s} {k}");
        }
    }
}

#[test]
fn checkpoint_is_idempotent() {
    let (table, mut state) = setup(12, 3, 16);
    let k = CommitteeId(1);
    let id = state.next_tx_id();
    hand_to_coordinator(&table, &mut state, k, Transaction::transfer(id, k, k, 0));
    assert!(state.replicate_checkpoint(&table, k, 3).unwrap() > 0);
    let before: BTreeMap<_, _> = state.replicas().iter().map(|(key, r)| (*key, (r.epoch, r.graph.len(), r.taken_at))).collect();
    assert_eq!(state.replicate_checkpoint(&table, k, 2).unwrap(), 0);
    let after: BTreeMap<_, _> = state.replicas().iter().map(|(key, r)| (*key, (r.epoch, r.graph.len(), r.taken_at))).collect();
    assert_eq!(before, after);
}

#[test]
fn failure_without_checkpoint_is_unrecoverable() {
    let (mut table, mut state) = setup(12, 3, 16);
    let k = CommitteeId(2);
    state.fail_committee(&mut table, k, 5).unwrap();
    let fresh: BTreeSet<NodeId> = (100..104).map(NodeId).collect();
    assert!(matches!(
        state.recover_failed_shard(&mut table, k, &fresh, 6),
        Err(ShardingError::NoReplica(_))
    ));
}

#[test]
fn idle_committee_recovers_empty() {
    let (mut table, mut state) = setup(12, 3, 16);
    let k = CommitteeId(0);
    for c in table.committees() {
        state.replicate_checkpoint(&table, c, 1).unwrap();
    }
    assert_eq!(state.fail_committee(&mut table, k, 2).unwrap(), 0);
    let fresh: BTreeSet<NodeId> = (100..104).map(NodeId).collect();
    let report = state.recover_failed_shard(&mut table, k, &fresh, 3).unwrap();
    assert!(report.prefix_preserved);
    assert_eq!(report.recovered_len, 0);
    assert!(state.ledger(k).unwrap().is_empty());
    assert_eq!(table.members(k), fresh.into_iter().collect::<Vec<_>>());
    table.check().unwrap();
    state.check(&table).unwrap();
}

#[test]
fn coordinator_choice_is_uniform_across_seeds() {
    // Ten members per committee; count which rank becomes coordinator.
    let mut counts = [0u64; 10];
    for seed in 0..2000 {
        let table = partition_nodes(&nodes(30), 3, seed).unwrap();
        for k in table.committees() {
            let members = table.members(k);
            let c = table.coordinator(k).unwrap();
            counts[members.iter().position(|m| *m == c).unwrap()] += 1;
        }
    }
    let (stat, ok) = common::uniform_chi_square(&counts);
    assert!(ok, "chi-square {stat} for {counts:?}");
}

#[test]
fn generated_transactions_classify_as_bookkept() {
    let table = partition_nodes(&nodes(40), 4, 2).unwrap();
    let workload = WorkloadSection {
        tx_rate: 1000.0,
        cross_ratio: 0.3,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut next = 0u64;
    let txs = inject_workload(&workload, &table, 0, &mut rng, || {
        next += 1;
        TxId(next)
    });
    let cross = txs.iter().filter(|(_, t)| classify_transaction(t) == TxClass::Cross).count();
    let bookkept = txs.iter().filter(|(_, t)| t.origin != t.target).count();
    assert_eq!(cross, bookkept);
    for (node, t) in &txs {
        assert_eq!(table.committee_of(*node), Some(t.origin));
    }
}

proptest! {
    #[test]
    fn partition_is_balanced_and_deterministic(n in 1u32..80, s in 1u32..12, seed in any::<u64>()) {
        prop_assume!(s <= n);
        let set = nodes(n);
        let table = partition_nodes(&set, s, seed).unwrap();
        prop_assert_eq!(&table, &partition_nodes(&set, s, seed).unwrap());
        let sizes: Vec<usize> = table.committees().map(|k| table.size(k)).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        prop_assert_eq!(sizes.iter().sum::<usize>(), n as usize);
        prop_assert_eq!(table.global_committee().len(), s as usize);
        for k in table.committees() {
            let c = table.coordinator(k).unwrap();
            prop_assert_eq!(table.committee_of(c), Some(k));
        }
        table.check().unwrap();
    }
}
