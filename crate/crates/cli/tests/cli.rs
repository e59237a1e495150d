use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_shardgraph");

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/scenarios").join(format!("{name}.toml"))
}

fn shardgraph(cwd: &Path, args: &[&str]) -> Output {
    Command::new(BIN).args(args).current_dir(cwd).env_remove("SHARDGRAPH_OUT").output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("tiny.toml");
    std::fs::write(&p, body).unwrap();
    p
}

const TINY: &str = "[scenario]\nn = 4\ns = 1\nseed = 3\nduration = 40\ndrain = 20\n";

#[test]
fn minimal_run_writes_report_dir() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TINY);
    let o = shardgraph(tmp.path(), &["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let dir = tmp.path().join("runs/tiny");
    for f in ["report.json", "per_node_metrics.csv", "formula_comparison.csv", "tx_audit.csv"] {
        assert!(dir.join(f).is_file(), "{f}");
    }
}

#[test]
fn output_root_follows_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TINY);
    let o = Command::new(BIN)
        .args(["run", "--config", cfg.to_str().unwrap()])
        .current_dir(tmp.path())
        .env("SHARDGRAPH_OUT", tmp.path().join("elsewhere"))
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(tmp.path().join("elsewhere/tiny/report.json").is_file());
    assert!(!tmp.path().join("runs").exists());
}

#[test]
fn more_shards_than_nodes_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TINY);
    let o = shardgraph(tmp.path(), &["run", "--config", cfg.to_str().unwrap(), "--set", "scenario.s=8"]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("scenario.s") && err.contains("n >= s"), "{err}");
    assert!(!tmp.path().join("runs").exists());
}

#[test]
fn unknown_key_is_named() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &format!("{TINY}shards_per_node = 2\n"));
    let o = shardgraph(tmp.path(), &["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("shards_per_node"), "{}", stderr(&o));

    let cfg = write_config(tmp.path(), TINY);
    let o = shardgraph(tmp.path(), &["run", "--config", cfg.to_str().unwrap(), "--set", "workload.burst=3"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("burst"), "{}", stderr(&o));
}

#[test]
fn missing_config_is_an_io_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = shardgraph(tmp.path(), &["run", "--config", "absent.toml"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn rerun_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = scenario("equivocator");
    for out in ["a", "b"] {
        let o = shardgraph(tmp.path(), &["run", "--config", cfg.to_str().unwrap(), "--out", out]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    let mut files: Vec<_> = std::fs::read_dir(tmp.path().join("a")).unwrap().map(|e| e.unwrap().file_name()).collect();
    files.sort();
    assert!(files.len() >= 5);
    for f in files {
        let a = std::fs::read(tmp.path().join("a").join(&f)).unwrap();
        let b = std::fs::read(tmp.path().join("b").join(&f)).unwrap();
        assert_eq!(a, b, "{f:?}");
    }
}

#[test]
fn formulas_print_closed_forms() {
    let tmp = tempfile::tempdir().unwrap();
    let o = shardgraph(
        tmp.path(),
        &["formulas", "--n", "100", "--s", "10", "--throughput", "1000", "--cross-throughput", "50"],
    );
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let value = |name: &str| -> f64 {
        let line = text.lines().find(|l| l.starts_with(name)).unwrap();
        line.split_whitespace().nth(1).unwrap().parse().unwrap()
    };
    assert_eq!(value("comm_per_node_unsharded"), 990.0);
    assert_eq!(value("comm_per_node_sharded"), 90.0);
    assert_eq!(value("cross_cost"), 50.0);
    assert_eq!(value("replica_count"), 19.0);
    assert_eq!(value("storage_ratio"), 0.1);
}

#[test]
fn formulas_reject_uneven_split() {
    let tmp = tempfile::tempdir().unwrap();
    let o = shardgraph(tmp.path(), &["formulas", "--n", "10", "--s", "3", "--throughput", "1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("10 nodes"), "{}", stderr(&o));
    let o = shardgraph(tmp.path(), &["formulas", "--n", "10", "--s", "2", "--throughput=-1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("throughput"), "{}", stderr(&o));
}

#[test]
fn sweep_writes_one_row_per_point() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[scenario]\nn = 16\ns = 1\nseed = 3\nduration = 40\ndrain = 20\n");
    let o = shardgraph(
        tmp.path(),
        &["sweep", "--config", cfg.to_str().unwrap(), "--sweep", "scenario.s=1,2,4,8", "--out", "grid"],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let mut rows = csv::Reader::from_path(tmp.path().join("grid/sweep.csv")).unwrap();
    let s_col = rows.headers().unwrap().iter().position(|h| h == "s").unwrap();
    let s: Vec<String> = rows.records().map(|r| r.unwrap()[s_col].to_string()).collect();
    assert_eq!(s, ["1", "2", "4", "8"]);
    for v in [1, 2, 4, 8] {
        assert!(tmp.path().join(format!("grid/scenario.s={v}/report.json")).is_file());
    }
}

#[test]
fn sweep_keeps_partial_results() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TINY);
    let o = shardgraph(
        tmp.path(),
        &["sweep", "--config", cfg.to_str().unwrap(), "--sweep", "scenario.s=1,8", "--out", "grid"],
    );
    assert_eq!(o.status.code(), Some(2));
    let text = std::fs::read_to_string(tmp.path().join("grid/sweep.csv")).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(text.lines().nth(1).unwrap().contains(",ok,"));
    assert!(tmp.path().join("grid/scenario.s=1/report.json").is_file());
}

#[test]
fn empty_sweep_is_named() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TINY);
    let o = shardgraph(tmp.path(), &["sweep", "--config", cfg.to_str().unwrap(), "--sweep", "scenario.s="]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("scenario.s"), "{}", stderr(&o));
    assert!(!tmp.path().join("runs").exists());
}

#[test]
fn fixtures_are_written_to_the_output_dir() {
    let tmp = tempfile::tempdir().unwrap();
    let o = shardgraph(tmp.path(), &["fixtures", "--out", "fx"]);
    assert_eq!(o.status.code(), Some(0));
    let n = std::fs::read_dir(tmp.path().join("fx")).unwrap().count();
    assert!(n >= 3);
    assert_eq!(std::fs::read_dir(tmp.path()).unwrap().count(), 1);
}
