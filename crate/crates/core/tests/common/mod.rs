#![allow(dead_code)]

pub mod oracle;

use std::path::PathBuf;

use oracle::{Oracle, OracleFame};
use shardgraph::hashgraph::fixture::Fixture;
use shardgraph::hashgraph::Fame;

pub fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

/// Every `.hg` fixture shipped with the crate, sorted by name.
pub fn shipped_fixtures() -> Vec<(String, Fixture)> {
    let mut out: Vec<(String, Fixture)> = std::fs::read_dir(fixture_dir())
        .expect("fixture dir")
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "hg"))
        .map(|p| {
            let text = std::fs::read_to_string(&p).unwrap();
            (p.file_name().unwrap().to_string_lossy().into_owned(), Fixture::parse(&text).unwrap())
        })
        .collect();
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out
}

/// Pearson chi-square statistic of `counts` against a uniform expectation,
/// and whether it stays under the 0.999 quantile.
pub fn uniform_chi_square(counts: &[u64]) -> (f64, bool) {
    use statrs::distribution::{ChiSquared, ContinuousCDF};
    let total: u64 = counts.iter().sum();
    let expected = total as f64 / counts.len() as f64;
    let stat: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let critical = ChiSquared::new((counts.len() - 1) as f64).unwrap().inverse_cdf(0.999);
    (stat, stat < critical)
}

pub fn scenario_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios")
}

/// Every shipped scenario file, sorted by name.
pub fn shipped_scenarios() -> Vec<(String, shardgraph::sim::ScenarioConfig)> {
    let mut out: Vec<_> = std::fs::read_dir(scenario_dir())
        .expect("scenario dir")
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .map(|p| {
            let cfg = shardgraph::sim::ScenarioConfig::load(&p, &[]).unwrap();
            (p.file_stem().unwrap().to_string_lossy().into_owned(), cfg)
        })
        .collect();
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out
}

/// Parse a config from TOML text plus `key=value` overrides.
pub fn config(text: &str, overrides: &[&str]) -> shardgraph::sim::ScenarioConfig {
    let o: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    shardgraph::sim::ScenarioConfig::from_toml_with(text, &o).unwrap()
}

/// Compare every annotation of `f`'s graph with the brute-force oracle.
pub fn check_against_oracle(f: &Fixture) -> Result<(), String> {
    let events = f.materialize();
    let mut g = f.to_graph().map_err(|e| e.to_string())?;
    let oracle = Oracle::new(events.clone(), f.population as usize);
    for (i, a) in events.iter().enumerate() {
        for (j, b) in events.iter().enumerate() {
            if g.is_ancestor(&a.id, &b.id).unwrap() != oracle.ancestor(i, j) {
                return Err(format!("is_ancestor({i},{j})"));
            }
            if g.strongly_sees(&a.id, &b.id).unwrap() != oracle.strongly_sees(i, j) {
                return Err(format!("strongly_sees({i},{j})"));
            }
        }
    }
    let (rounds, witness) = oracle.rounds();
    let fame = oracle.fame();
    g.elect_fame();
    for (i, e) in events.iter().enumerate() {
        if g.round(&e.id).unwrap() != rounds[i] {
            return Err(format!("round of {i}: {} vs {}", g.round(&e.id).unwrap(), rounds[i]));
        }
        if g.is_witness(&e.id).unwrap() != witness[i] {
            return Err(format!("witness flag of {i}"));
        }
        if witness[i] {
            let expected = match fame[i] {
                OracleFame::Undecided => Fame::Undecided,
                OracleFame::Yes => Fame::Famous,
                OracleFame::No => Fame::NotFamous,
            };
            if g.fame(&e.id).unwrap() != expected {
                return Err(format!("fame of {i}"));
            }
        }
    }
    let order: Vec<_> = g
        .consensus_order()
        .ordered
        .iter()
        .map(|e| (e.event, e.round_received, e.consensus_timestamp))
        .collect();
    if order != oracle.order() {
        return Err(format!("order mismatch: {} vs {} entries", order.len(), oracle.order().len()));
    }
    Ok(())
}
