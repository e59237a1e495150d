//! `shardgraph` runs simulator scenarios, prints the closed-form cost table,
//! and regenerates the consensus fixtures.
//!
//! Exit codes:
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 2 | bad arguments or configuration |
//! | 3 | file system error |
//! | 4 | invariant violation, failed audit, or formula tolerance exceeded |

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;
use shardgraph::hashgraph::fixture;
use shardgraph::metrics::{
    analytic_comm_cost, analytic_comm_cost_sharded, analytic_cross_cost, analytic_replica_count, analytic_storage_ratio,
    MetricsError,
};
use shardgraph::sim::{run_scenario, ConfigError, RunReport, ScenarioConfig, SimError};

const OUT_ENV: &str = "SHARDGRAPH_OUT";

#[derive(Parser)]
#[command(
    name = "shardgraph",
    version,
    about = "Sharded hashgraph simulator",
    after_help = "Exit codes: 0 success, 2 bad arguments or configuration, 3 file system error, \
                  4 invariant violation, failed audit or formula tolerance exceeded.\n\
                  Output defaults to $SHARDGRAPH_OUT (or ./runs) when --out is not given."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write its report directory.
    Run(RunArgs),
    /// Print the closed-form costs for a network shape.
    Formulas(FormulaArgs),
    /// Write the consensus fixtures used by the oracle tests.
    Fixtures {
        /// Output directory [default: $SHARDGRAPH_OUT/fixtures]
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a scenario once per value of one parameter.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override a key, e.g. `--set scenario.s=4`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory [default: $SHARDGRAPH_OUT/<config name>]
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Parameter grid, e.g. `scenario.s=1,2,4,8`.
    #[arg(long, value_name = "KEY=V1,V2,...")]
    sweep: String,
}

#[derive(Args)]
struct FormulaArgs {
    #[arg(long)]
    n: u64,
    #[arg(long)]
    s: u64,
    /// Network transactions per unit time.
    #[arg(long)]
    throughput: f64,
    /// Cross-shard transactions per unit time.
    #[arg(long, default_value_t = 0.0)]
    cross_throughput: f64,
    #[arg(long, default_value_t = 1.0)]
    event_size: f64,
}

#[derive(Debug)]
enum Failure {
    Config(String),
    Io(String),
    Check(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Io(_) => 3,
            Failure::Check(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Io(m) | Failure::Check(m) => m,
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io { .. } => Failure::Io(e.to_string()),
            _ => Failure::Config(e.to_string()),
        }
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Config(c) => c.into(),
            SimError::Io(_) | SimError::Metrics(MetricsError::Io(_) | MetricsError::Csv(_)) => Failure::Io(e.to_string()),
            _ => Failure::Check(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

fn out_root() -> PathBuf {
    std::env::var_os(OUT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"))
}

fn default_out(config: &Path, suffix: &str) -> PathBuf {
    let stem = config.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "run".into());
    out_root().join(format!("{stem}{suffix}"))
}

/// Why a finished run should not count as a success, if it should not.
fn verdict(report: &RunReport) -> Option<String> {
    let s = &report.summary;
    if !report.healthy() {
        return Some(format!(
            "audit failed: agreement {}, partition {}, cross missing {}, duplicated {}, anomalies {}",
            s.honest_orders_agree,
            s.partition_ok,
            s.cross_missing,
            s.cross_duplicated,
            report.anomalies.len()
        ));
    }
    let off: Vec<String> = report
        .tolerance_failures()
        .iter()
        .map(|r| format!("{} ({}) off by {:+.1}%", r.quantity, r.scope, r.relative_deviation * 100.0))
        .collect();
    (!off.is_empty()).then(|| format!("outside tolerance: {}", off.join(", ")))
}

fn print_summary(dir: &Path, report: &RunReport) {
    let s = &report.summary;
    println!("wrote {}", dir.display());
    println!(
        "injected {} (cross {}), cross exactly once {}/{}, intra ordered {}, empty events {:.3}",
        s.injected, s.injected_cross, s.cross_exactly_once, s.audited_cross, s.intra_ordered, s.empty_event_fraction
    );
    for row in &report.comparison {
        let flag = match row.within_tolerance {
            Some(true) => "ok",
            Some(false) if report.near_ideal() => "OFF",
            Some(false) => "off (not near ideal)",
            None => "",
        };
        println!(
            "  {:<24} {:<16} analytic {:>12.3} measured {:>12.3} {:+7.1}% {flag}",
            row.quantity,
            row.scope,
            row.analytic,
            row.measured,
            row.relative_deviation * 100.0
        );
    }
}

fn cmd_run(args: &RunArgs) -> Result<(), Failure> {
    let sc = &args.scenario;
    let config = ScenarioConfig::load(&sc.config, &sc.overrides)?;
    let out = sc.out.clone().unwrap_or_else(|| default_out(&sc.config, ""));
    let report = run_scenario(&config)?;
    report.write_to(&out)?;
    print_summary(&out, &report);
    match verdict(&report) {
        Some(why) => Err(Failure::Check(why)),
        None => Ok(()),
    }
}

fn cmd_formulas(a: &FormulaArgs) -> Result<(), Failure> {
    let named = |e: MetricsError| Failure::Config(e.to_string());
    let rows = [
        ("comm_per_node_unsharded", analytic_comm_cost(a.n, a.throughput, a.event_size).map_err(named)?),
        ("comm_per_node_sharded", analytic_comm_cost_sharded(a.n, a.s, a.throughput, a.event_size).map_err(named)?),
        ("cross_cost", analytic_cross_cost(a.cross_throughput, a.event_size).map_err(named)?),
        ("replica_count", analytic_replica_count(a.n, a.s).map_err(named)? as f64),
        ("storage_ratio", analytic_storage_ratio(a.s).map_err(named)?),
    ];
    println!("{:<24} value", "quantity");
    for (name, v) in rows {
        println!("{name:<24} {v}");
    }
    Ok(())
}

fn cmd_fixtures(out: Option<PathBuf>) -> Result<(), Failure> {
    let dir = out.unwrap_or_else(|| out_root().join("fixtures"));
    std::fs::create_dir_all(&dir)?;
    for (name, f) in fixture::shipped() {
        std::fs::write(dir.join(name), f.to_text())?;
        println!("wrote {}", dir.join(name).display());
    }
    Ok(())
}

fn parse_sweep(spec: &str) -> Result<(String, Vec<String>), Failure> {
    let (key, values) = spec
        .split_once('=')
        .ok_or_else(|| Failure::Config(format!("sweep `{spec}`: expected KEY=V1,V2,...")))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(Failure::Config(format!("sweep `{spec}`: missing parameter name")));
    }
    let values: Vec<String> = values.split(',').map(str::trim).filter(|v| !v.is_empty()).map(String::from).collect();
    if values.is_empty() {
        return Err(Failure::Config(format!("sweep over `{key}` has an empty grid")));
    }
    Ok((key.to_string(), values))
}

#[derive(Serialize)]
struct SweepRow {
    parameter: String,
    value: String,
    status: String,
    n: Option<u32>,
    s: Option<u32>,
    injected: Option<u64>,
    injected_cross: Option<u64>,
    cross_exactly_once: Option<u64>,
    audited_cross: Option<u64>,
    empty_event_fraction: Option<f64>,
    comm_analytic: Option<f64>,
    comm_measured: Option<f64>,
    comm_deviation: Option<f64>,
    storage_analytic: Option<f64>,
    storage_measured: Option<f64>,
    coordinator_comm: Option<f64>,
    max_adversarial_fraction: Option<f64>,
}

impl SweepRow {
    fn failed(parameter: &str, value: &str, status: String) -> Self {
        SweepRow {
            parameter: parameter.into(),
            value: value.into(),
            status,
            n: None,
            s: None,
            injected: None,
            injected_cross: None,
            cross_exactly_once: None,
            audited_cross: None,
            empty_event_fraction: None,
            comm_analytic: None,
            comm_measured: None,
            comm_deviation: None,
            storage_analytic: None,
            storage_measured: None,
            coordinator_comm: None,
            max_adversarial_fraction: None,
        }
    }

    fn from_report(parameter: &str, value: &str, status: String, r: &RunReport) -> Self {
        let row = |q: &str| r.comparison.iter().find(|c| c.quantity == q && c.scope == "non-coordinator");
        let comm = row("comm_per_node");
        let storage = row("storage_per_node");
        SweepRow {
            n: Some(r.config.scenario.n),
            s: Some(r.config.scenario.s),
            injected: Some(r.summary.injected),
            injected_cross: Some(r.summary.injected_cross),
            cross_exactly_once: Some(r.summary.cross_exactly_once),
            audited_cross: Some(r.summary.audited_cross),
            empty_event_fraction: Some(r.summary.empty_event_fraction),
            comm_analytic: comm.map(|c| c.analytic),
            comm_measured: comm.map(|c| c.measured),
            comm_deviation: comm.map(|c| c.relative_deviation),
            storage_analytic: storage.map(|c| c.analytic),
            storage_measured: storage.map(|c| c.measured),
            coordinator_comm: r.metrics.coordinator_comm_rate(),
            max_adversarial_fraction: Some(r.adversary.max_fraction),
            ..SweepRow::failed(parameter, value, status)
        }
    }
}

fn sweep_point(sc: &ScenarioArgs, key: &str, value: &str, out: &Path) -> (SweepRow, Option<Failure>) {
    let mut overrides = sc.overrides.clone();
    overrides.push(format!("{key}={value}"));
    let result = ScenarioConfig::load(&sc.config, &overrides)
        .map_err(Failure::from)
        .and_then(|config| run_scenario(&config).map_err(Failure::from))
        .and_then(|report| {
            report.write_to(&out.join(format!("{key}={value}")))?;
            Ok(report)
        });
    match result {
        Ok(report) => {
            let why = verdict(&report);
            let status = why.clone().unwrap_or_else(|| "ok".into());
            (SweepRow::from_report(key, value, status, &report), why.map(Failure::Check))
        }
        Err(f) => (SweepRow::failed(key, value, f.message().to_string()), Some(f)),
    }
}

fn cmd_sweep(args: &SweepArgs) -> Result<(), Failure> {
    let (key, values) = parse_sweep(&args.sweep)?;
    let sc = &args.scenario;
    // Fail fast on a broken base file before spending time on the grid.
    ScenarioConfig::load(&sc.config, &sc.overrides)?;
    let out = sc.out.clone().unwrap_or_else(|| default_out(&sc.config, "-sweep"));
    std::fs::create_dir_all(&out)?;
    let results: Vec<(SweepRow, Option<Failure>)> =
        values.par_iter().map(|v| sweep_point(sc, &key, v, &out)).collect();

    let mut w = csv::Writer::from_path(out.join("sweep.csv"))?;
    for (row, _) in &results {
        w.serialize(row)?;
    }
    w.flush()?;
    println!("wrote {}", out.join("sweep.csv").display());

    let mut worst: Option<Failure> = None;
    for (row, failure) in results {
        println!("  {key}={} {}", row.value, row.status);
        if let Some(f) = failure {
            if worst.as_ref().is_none_or(|w| f.code() > w.code()) {
                worst = Some(f);
            }
        }
    }
    match worst {
        Some(f) => Err(f),
        None => Ok(()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Formulas(a) => cmd_formulas(a),
        Command::Fixtures { out } => cmd_fixtures(out.clone()),
        Command::Sweep(a) => cmd_sweep(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_spec_parsing() {
        let (k, v) = parse_sweep("scenario.s=1, 2,4,8").unwrap();
        assert_eq!(k, "scenario.s");
        assert_eq!(v, ["1", "2", "4", "8"]);
        assert!(matches!(parse_sweep("scenario.s="), Err(Failure::Config(m)) if m.contains("empty grid")));
        assert!(matches!(parse_sweep("scenario.s"), Err(Failure::Config(_))));
        assert!(matches!(parse_sweep("=1,2"), Err(Failure::Config(_))));
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
