mod common;

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use shardgraph::ids::{CommitteeId, NodeId, TxId};
use shardgraph::sharding::{partition_nodes, Pool};
use shardgraph::sim::{gossip_partner, inject_workload, run_scenario, ConfigError, ScenarioConfig, WorkloadSection};

#[test]
fn unsharded_baseline_agrees() {
    let cfg = common::config("", &["scenario.n=4", "scenario.s=1", "scenario.duration=60", "scenario.drain=40"]);
    let r = run_scenario(&cfg).unwrap();
    assert!(r.healthy());
    assert!(r.summary.agreement_checked);
    assert_eq!(r.summary.injected_cross, 0);
    assert_eq!(r.summary.intra_missing, 0);
    assert!(r.summary.intra_ordered > 0);
    let c = r.committees[0].agreement.as_ref().unwrap();
    assert_eq!(c.views_checked, 4);
    assert!(c.consistent && c.shortest > 0);
}

#[test]
fn identical_configs_give_identical_bytes() {
    let (_, cfg) = common::shipped_scenarios().into_iter().find(|(n, _)| n == "reorg").unwrap();
    let a = run_scenario(&cfg).unwrap();
    let b = run_scenario(&cfg).unwrap();
    assert_eq!(a.to_json(), b.to_json());

    let dir = tempfile::tempdir().unwrap();
    a.write_to(&dir.path().join("a")).unwrap();
    b.write_to(&dir.path().join("b")).unwrap();
    for f in ["report.json", "per_node_metrics.csv", "formula_comparison.csv", "cross_latency_histogram.csv", "tx_audit.csv"] {
        let x = std::fs::read(dir.path().join("a").join(f)).unwrap();
        let y = std::fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(x, y, "{f}");
    }
}

#[test]
fn different_seeds_differ() {
    let a = run_scenario(&common::config("", &["scenario.n=8", "scenario.s=2", "scenario.seed=1"])).unwrap();
    let b = run_scenario(&common::config("", &["scenario.n=8", "scenario.s=2", "scenario.seed=2"])).unwrap();
    assert_ne!(a.to_json(), b.to_json());
}

#[test]
fn sharded_cross_traffic_is_ordered_once() {
    let cfg = common::config(
        "",
        &[
            "scenario.n=64",
            "scenario.s=8",
            "scenario.duration=80",
            "scenario.drain=60",
            "workload.tx_rate=48",
            "workload.cross_ratio=0.2",
            "audit.agreement=false",
        ],
    );
    let r = run_scenario(&cfg).unwrap();
    assert!(r.summary.injected_cross > 0);
    assert_eq!(r.summary.cross_exactly_once, r.summary.injected_cross);
    assert_eq!(r.summary.intra_missing, 0);
    assert!(r.tx_audit.iter().all(|row| row.status == "ordered"));
}

#[test]
fn cross_fraction_tracks_ratio() {
    let table = partition_nodes(&(0..40).map(NodeId).collect(), 4, 1).unwrap();
    let workload = WorkloadSection {
        tx_rate: 100.0,
        cross_ratio: 0.3,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut next = 0u64;
    let mut txs = Vec::new();
    for tick in 0..100 {
        txs.extend(inject_workload(&workload, &table, tick, &mut rng, || {
            next += 1;
            TxId(next)
        }));
    }
    assert!(txs.len() > 9000);
    let cross = txs.iter().filter(|(_, t)| t.is_cross()).count() as f64 / txs.len() as f64;
    assert!((cross - 0.3).abs() <= 0.02, "{cross}");
}

#[test]
fn full_cross_ratio_with_two_committees_targets_the_other() {
    let table = partition_nodes(&(0..10).map(NodeId).collect(), 2, 1).unwrap();
    let workload = WorkloadSection {
        tx_rate: 50.0,
        cross_ratio: 1.0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut next = 0;
    for (_, t) in inject_workload(&workload, &table, 0, &mut rng, || {
        next += 1;
        TxId(next)
    }) {
        assert_eq!(t.target.0, 1 - t.origin.0);
    }
}

#[test]
fn partners_are_uniform() {
    let table = partition_nodes(&(0..10).map(NodeId).collect(), 1, 3).unwrap();
    let node = table.members(CommitteeId(0)).into_iter().find(|m| !table.is_coordinator(*m)).unwrap();
    let others: Vec<NodeId> = table.members(CommitteeId(0)).into_iter().filter(|m| *m != node).collect();
    let mut counts = vec![0u64; others.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for tick in 0..10_000 {
        let (pool, p) = gossip_partner(node, &table, tick, &mut rng).unwrap();
        assert_eq!(pool, Pool::Local);
        counts[others.iter().position(|o| *o == p).unwrap()] += 1;
    }
    let (stat, ok) = common::uniform_chi_square(&counts);
    assert!(ok, "chi-square {stat} for {counts:?}");
}

#[test]
fn batching_delivers_the_same_transfers_in_fewer_events() {
    let run = |batch: &str| {
        run_scenario(&common::config(
            "",
            &[
                "scenario.n=24",
                "scenario.s=4",
                "scenario.duration=140",
                "scenario.drain=80",
                "workload.tx_rate=4",
                "workload.cross_ratio=0.3",
                "audit.agreement=false",
                batch,
            ],
        ))
        .unwrap()
    };
    let batched = run("protocol.batch_limit=16");
    let single = run("protocol.batch_limit=1");
    let delivered = |r: &shardgraph::sim::RunReport| -> Vec<(TxId, CommitteeId, usize)> {
        r.tx_audit.iter().filter(|row| row.class == "cross").map(|row| (row.tx, row.target, row.ordered_count)).collect()
    };
    assert_eq!(delivered(&batched), delivered(&single));
    for r in [&batched, &single] {
        assert_eq!(r.summary.cross_exactly_once, r.summary.injected_cross);
    }
    assert!(
        batched.metrics.global_carriers < single.metrics.global_carriers,
        "{} vs {}",
        batched.metrics.global_carriers,
        single.metrics.global_carriers
    );
}

#[test]
fn equivocator_is_caught_and_orders_agree() {
    let cfg = common::config(
        "",
        &[
            "scenario.n=7",
            "scenario.s=1",
            "scenario.duration=60",
            "scenario.drain=40",
            "adversary.kind=\"equivocator\"",
            "adversary.fraction=0.15",
            "adversary.start=5",
        ],
    );
    let r = run_scenario(&cfg).unwrap();
    assert_eq!(r.adversary.byzantine.len(), 1);
    assert!(r.forks.iter().all(|f| f.creator == r.adversary.byzantine[0]));
    assert!(!r.forks.is_empty());
    assert!(r.summary.honest_orders_agree);
}

#[test]
fn churn_statistics_are_reported() {
    let (_, cfg) = common::shipped_scenarios().into_iter().find(|(n, _)| n == "churn").unwrap();
    let r = run_scenario(&cfg).unwrap();
    let a = &r.adversary;
    assert!(a.samples > 0);
    assert!(a.samples_below_third <= a.samples);
    assert!((0.0..=1.0).contains(&a.max_fraction));
    let p = a.binomial_prediction.unwrap();
    assert!(p > 0.0 && p < 1.0);
    assert!(a.actions.iter().any(|x| x.action == "cycle_identity"));
    assert!(r.summary.partition_ok);
    assert!(r.healthy());
}

#[test]
fn failed_shard_is_restored() {
    let (_, cfg) = common::shipped_scenarios().into_iter().find(|(n, _)| n == "shard_failure").unwrap();
    let r = run_scenario(&cfg).unwrap();
    assert_eq!(r.failures.len(), 1);
    assert_eq!(r.recoveries.len(), 1);
    let rec = &r.recoveries[0];
    assert!(rec.prefix_preserved);
    assert!(rec.checkpoint_len <= rec.pre_failure_len);
    assert!(rec.recovered_len >= rec.checkpoint_len);
    assert!(r.healthy());
}

#[test]
fn bad_override_is_named() {
    let err = ScenarioConfig::from_toml_with("", &["scenario.bogus=1".to_string()]).unwrap_err();
    assert!(err.to_string().contains("bogus"), "{err}");
    let err = ScenarioConfig::from_toml_with("", &["scenario.n".to_string()]).unwrap_err();
    assert!(matches!(err, ConfigError::Override { .. }), "{err}");
}

#[test]
fn shipped_scenarios_parse_and_round_trip() {
    let names: BTreeSet<String> = common::shipped_scenarios().into_iter().map(|(n, _)| n).collect();
    assert!(names.len() >= 6, "{names:?}");
    for (name, cfg) in common::shipped_scenarios() {
        let back = ScenarioConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg, "{name}");
    }
}
