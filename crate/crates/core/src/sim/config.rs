use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::hashgraph::EventSizeModel;
use crate::reconfig::{ReconfigConfig, TriggerMode};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{0}")]
    Parse(String),
    #[error("override `{key}`: {msg}")]
    Override { key: String, msg: String },
    #[error("invalid `{key}`: {msg}")]
    Invalid { key: &'static str, msg: String },
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Everything a run depends on. Sections map to `[section]` tables in the
/// configuration file; every key has a default.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: ScenarioSection,
    pub workload: WorkloadSection,
    pub protocol: ProtocolSection,
    pub reconfig: ReconfigSection,
    pub adversary: AdversarySection,
    pub script: ScriptSection,
    pub metrics: MetricsSection,
    pub audit: AuditSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSection {
    pub n: u32,
    pub s: u32,
    pub seed: u64,
    /// Last tick of the run.
    pub duration: u64,
    /// Closing ticks with no new transactions, so queued work can finish.
    pub drain: u64,
    pub sync_interval: u64,
    /// Upper bound of a uniform per-sync delivery delay; 0 delivers at once.
    pub max_sync_delay: u64,
    /// Ticks between consensus evaluations.
    pub consensus_interval: u64,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        ScenarioSection {
            n: 4,
            s: 1,
            seed: 0,
            duration: 100,
            drain: 40,
            sync_interval: 1,
            max_sync_delay: 0,
            consensus_interval: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkloadSection {
    /// Mean transactions per tick across the network.
    pub tx_rate: f64,
    pub cross_ratio: f64,
}

impl Default for WorkloadSection {
    fn default() -> Self {
        WorkloadSection {
            tx_rate: 4.0,
            cross_ratio: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolSection {
    pub batch_limit: usize,
    /// Decided Global Committee rounds between checkpoints.
    pub checkpoint_period: u64,
    pub coin_period: u32,
    pub event_base_units: u64,
    pub event_tx_units: u64,
}

impl Default for ProtocolSection {
    fn default() -> Self {
        ProtocolSection {
            batch_limit: 16,
            checkpoint_period: 1,
            coin_period: crate::hashgraph::DEFAULT_COIN_PERIOD,
            event_base_units: 0,
            event_tx_units: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconfigSection {
    pub trigger_mode: TriggerMode,
    pub donor_count: usize,
    pub min_committee_size: usize,
}

impl Default for ReconfigSection {
    fn default() -> Self {
        let d = ReconfigConfig::default();
        ReconfigSection {
            trigger_mode: d.trigger_mode,
            donor_count: d.donor_count,
            min_committee_size: d.min_committee_size,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdversaryKind {
    #[default]
    None,
    Equivocator,
    Churn,
    ShardFailure,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdversarySection {
    pub kind: AdversaryKind,
    /// Byzantine share: per committee for equivocators, network-wide for churn.
    pub fraction: f64,
    /// First action tick.
    pub start: u64,
    pub interval: u64,
    /// No actions at or after this tick; defaults to the end of injection.
    pub stop: Option<u64>,
    pub failed_committee: u32,
    pub fail_at: u64,
    pub recover_at: Option<u64>,
    /// Replacement nodes on recovery; defaults to the failed committee's size.
    pub replacements: Option<u32>,
    /// Allows f >= 1/3; the run is then reported as an attack demonstration.
    pub attack_demo: bool,
}

impl Default for AdversarySection {
    fn default() -> Self {
        AdversarySection {
            kind: AdversaryKind::None,
            fraction: 0.0,
            start: 10,
            interval: 10,
            stop: None,
            failed_committee: 0,
            fail_at: 50,
            recover_at: None,
            replacements: None,
            attack_demo: false,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScriptSection {
    /// `[tick, node]` pairs.
    pub leave: Vec<[u64; 2]>,
    /// Ticks at which a fresh node asks to join.
    pub join: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsSection {
    pub tolerance: f64,
    pub handshake_units: u64,
    pub latency_bucket: u64,
}

impl Default for MetricsSection {
    fn default() -> Self {
        MetricsSection {
            tolerance: 0.15,
            handshake_units: 1,
            latency_bucket: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditSection {
    /// Recompute every honest view's order at the end and compare.
    pub agreement: bool,
    /// Check structural invariants after every scheduled event.
    pub invariants: bool,
}

impl Default for AuditSection {
    fn default() -> Self {
        AuditSection {
            agreement: true,
            invariants: true,
        }
    }
}

/// Split `section.key=value`. The value is read as a TOML literal when it
/// parses as one and as a bare string otherwise.
pub fn parse_override(spec: &str) -> Result<(String, toml::Value), ConfigError> {
    let (key, raw) = spec.split_once('=').ok_or_else(|| ConfigError::Override {
        key: spec.to_string(),
        msg: "expected section.key=value".into(),
    })?;
    let key = key.trim().to_string();
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    Ok((key, value))
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Self::from_toml_with(text, &[])
    }

    /// Parse `text`, apply `section.key=value` overrides, and validate.
    pub fn from_toml_with(text: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let config: ScenarioConfig = if overrides.is_empty() {
            toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?
        } else {
            let mut table: toml::Table = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
            for spec in overrides {
                let (key, value) = parse_override(spec)?;
                let (section, field) = key.split_once('.').ok_or_else(|| ConfigError::Override {
                    key: key.clone(),
                    msg: "expected section.key".into(),
                })?;
                let entry = table
                    .entry(section.to_string())
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()));
                let toml::Value::Table(t) = entry else {
                    return Err(ConfigError::Override {
                        key: key.clone(),
                        msg: format!("`{section}` is not a section"),
                    });
                };
                t.insert(field.to_string(), value);
            }
            let merged = toml::to_string(&table).map_err(|e| ConfigError::Parse(e.to_string()))?;
            toml::from_str(&merged).map_err(|e| ConfigError::Parse(format!("after overrides: {e}")))?
        };
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_with(&text, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn event_size(&self) -> EventSizeModel {
        EventSizeModel {
            base: self.protocol.event_base_units,
            per_tx: self.protocol.event_tx_units,
        }
    }

    pub fn reconfig_config(&self) -> ReconfigConfig {
        ReconfigConfig {
            trigger_mode: self.reconfig.trigger_mode,
            donor_count: self.reconfig.donor_count,
            min_committee_size: self.reconfig.min_committee_size,
        }
    }

    /// First tick with no injection.
    pub fn injection_end(&self) -> u64 {
        self.scenario.duration - self.scenario.drain
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        fn bad(key: &'static str, msg: impl Into<String>) -> Result<(), ConfigError> {
            Err(ConfigError::Invalid { key, msg: msg.into() })
        }
        let sc = &self.scenario;
        if sc.s == 0 {
            return bad("scenario.s", "need at least one shard (n >= s >= 1)");
        }
        if sc.n < sc.s {
            return bad("scenario.s", format!("n >= s >= 1 is required, got n = {}, s = {}", sc.n, sc.s));
        }
        if sc.duration == 0 {
            return bad("scenario.duration", "must be positive");
        }
        if sc.drain >= sc.duration {
            return bad("scenario.drain", "must be shorter than the duration");
        }
        if sc.sync_interval == 0 {
            return bad("scenario.sync_interval", "must be positive");
        }
        if sc.consensus_interval == 0 {
            return bad("scenario.consensus_interval", "must be positive");
        }
        let w = &self.workload;
        if !(w.tx_rate.is_finite() && w.tx_rate >= 0.0) {
            return bad("workload.tx_rate", "must be a non-negative number");
        }
        if !(0.0..=1.0).contains(&w.cross_ratio) {
            return bad("workload.cross_ratio", "must lie in [0, 1]");
        }
        let p = &self.protocol;
        if p.batch_limit == 0 {
            return bad("protocol.batch_limit", "must be positive");
        }
        if p.checkpoint_period == 0 {
            return bad("protocol.checkpoint_period", "must be positive");
        }
        if p.coin_period < 3 {
            return bad("protocol.coin_period", "must be at least 3");
        }
        if self.reconfig.donor_count == 0 {
            return bad("reconfig.donor_count", "must be positive");
        }
        if self.reconfig.min_committee_size == 0 {
            return bad("reconfig.min_committee_size", "must be positive");
        }
        let a = &self.adversary;
        if !(0.0..1.0).contains(&a.fraction) {
            return bad("adversary.fraction", "must lie in [0, 1)");
        }
        if matches!(a.kind, AdversaryKind::Equivocator | AdversaryKind::Churn) && a.fraction >= 1.0 / 3.0 && !a.attack_demo {
            return bad("adversary.fraction", "f < 1/3 is required unless adversary.attack_demo is set");
        }
        if a.interval == 0 {
            return bad("adversary.interval", "must be positive");
        }
        if a.kind == AdversaryKind::ShardFailure {
            if a.failed_committee >= sc.s {
                return bad("adversary.failed_committee", format!("no committee {} among {}", a.failed_committee, sc.s));
            }
            if a.fail_at >= sc.duration {
                return bad("adversary.fail_at", "must precede the end of the run");
            }
            if let Some(r) = a.recover_at {
                if r <= a.fail_at || r >= sc.duration {
                    return bad("adversary.recover_at", "must fall between fail_at and the end of the run");
                }
            }
        }
        for [tick, _] in &self.script.leave {
            if *tick >= sc.duration {
                return bad("script.leave", "tick beyond the end of the run");
            }
        }
        for tick in &self.script.join {
            if *tick >= sc.duration {
                return bad("script.join", "tick beyond the end of the run");
            }
        }
        let m = &self.metrics;
        if !(m.tolerance.is_finite() && m.tolerance >= 0.0) {
            return bad("metrics.tolerance", "must be a non-negative number");
        }
        if m.latency_bucket == 0 {
            return bad("metrics.latency_bucket", "must be positive");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_default() {
        assert_eq!(ScenarioConfig::from_toml("").unwrap(), ScenarioConfig::default());
    }

    #[test]
    fn round_trips_through_text() {
        let mut c = ScenarioConfig::default();
        c.adversary.recover_at = Some(70);
        c.adversary.kind = AdversaryKind::ShardFailure;
        c.script.leave.push([5, 1]);
        assert_eq!(ScenarioConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = ScenarioConfig::from_toml("[scenario]\nn = 8\nshards = 2\n").unwrap_err().to_string();
        assert!(err.contains("shards"), "{err}");
        assert!(err.contains("line 3"), "{err}");
    }

    #[test]
    fn n_below_s_is_rejected() {
        let err = ScenarioConfig::from_toml("[scenario]\nn = 2\ns = 3\n").unwrap_err();
        assert!(matches!(err, ConfigError::Invalid { key: "scenario.s", .. }), "{err}");
    }

    #[test]
    fn overrides_apply() {
        let c = ScenarioConfig::from_toml_with(
            "[scenario]\nn = 8\n",
            &["scenario.s=2".into(), "reconfig.trigger_mode=literal-s-over-2".into()],
        )
        .unwrap();
        assert_eq!(c.scenario.n, 8);
        assert_eq!(c.scenario.s, 2);
        assert_eq!(c.reconfig.trigger_mode, TriggerMode::ShardCount);
        assert!(ScenarioConfig::from_toml_with("", &["scenario.bogus=1".into()]).is_err());
        assert!(ScenarioConfig::from_toml_with("", &["nodot=1".into()]).is_err());
    }

    #[test]
    fn byzantine_share_needs_demo_flag() {
        let text = "[adversary]\nkind = \"equivocator\"\nfraction = 0.4\n";
        assert!(ScenarioConfig::from_toml(text).is_err());
        assert!(ScenarioConfig::from_toml(&format!("{text}attack_demo = true\n")).is_ok());
    }
}
