//! Scenario files: a versioned TOML document holding every run setting.
//! Physical quantities carry their unit in the key name.

use std::fs;
use std::path::{Path, PathBuf};

use mhmp_core::channel::{BandwidthPolicy, ChannelParams};
use mhmp_core::engine::{ChannelTrace, RunConfig, Scenario, TrafficTrace};
use mhmp_core::schedulers::{SchedulerConfig, SchedulerKind};
use mhmp_core::solver::SolverOptions;
use mhmp_core::topology::LinkDistances;
use mhmp_core::traffic::{QueueMode, ServiceSpec, TrafficMode};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const SCENARIO_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub schema_version: u32,
    pub topology: TopologySection,
    pub channel: ChannelSection,
    pub power: PowerSection,
    pub services: Vec<ServiceSection>,
    #[serde(default)]
    pub traffic: TrafficSection,
    pub simulation: SimulationSection,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default)]
    pub scheduler: SchedulerConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySection {
    pub relay_layers: usize,
    /// Same distance on every link.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub link_distance_m: Option<f64>,
    /// One distance per link, in link order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub link_distances_m: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSection {
    pub carrier_ghz: f64,
    pub noise_psd_dbm_hz: f64,
    pub total_bandwidth_hz: f64,
    pub bandwidth_policy: BandwidthPolicy,
    pub shadowing_sigma_db: f64,
    pub tx_height_m: f64,
    pub rx_height_m: f64,
    #[serde(default)]
    pub displacement_m_per_block: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerSection {
    /// Per-node transmit power cap.
    pub p_tot_dbm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceSection {
    pub packet_size_bytes: f64,
    pub arrival_rate_pps: f64,
    pub backlog_mean_pkts: f64,
    pub latency_budget_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrafficSection {
    pub mode: TrafficMode,
    pub queue_mode: QueueMode,
    /// Replayed losses, relative to the scenario file.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub channel_trace_csv: Option<PathBuf>,
    /// Replayed arrivals and backlog, relative to the scenario file.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub traffic_trace_csv: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    pub block_s: f64,
    pub horizon_s: f64,
    pub replicas: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "all_schemes")]
    pub schemes: Vec<SchedulerKind>,
    #[serde(default = "default_cdf_points")]
    pub cdf_points: usize,
}

fn all_schemes() -> Vec<SchedulerKind> {
    SchedulerKind::ALL.to_vec()
}

fn default_cdf_points() -> usize {
    RunConfig::default().cdf_points
}

fn invalid(keys: &[&str], message: impl Into<String>) -> CliError {
    CliError::Validation { message: message.into(), keys: keys.iter().map(|k| k.to_string()).collect() }
}

/// Backticked names in a deserializer message, e.g. "missing field `p_tot_dbm`".
fn quoted_keys(message: &str) -> Vec<String> {
    let first = message.lines().find(|l| l.contains('`')).unwrap_or("");
    first.split('`').skip(1).step_by(2).map(str::to_string).collect()
}

impl ScenarioFile {
    pub fn parse(text: &str) -> Result<ScenarioFile, CliError> {
        let file: ScenarioFile = toml::from_str(text).map_err(|e| {
            let message = e.message().to_string();
            let mut keys = quoted_keys(&message);
            // Only the first backticked name is the offending key; the rest
            // list the accepted ones.
            keys.truncate(1);
            CliError::Validation { message: e.to_string().trim_end().to_string(), keys }
        })?;
        if file.schema_version != SCENARIO_SCHEMA_VERSION {
            return Err(invalid(
                &["schema_version"],
                format!("unsupported schema_version {}; this build reads {SCENARIO_SCHEMA_VERSION}", file.schema_version),
            ));
        }
        Ok(file)
    }

    pub fn load(path: &Path) -> Result<ScenarioFile, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| invalid(&[], format!("cannot read scenario {}: {e}", path.display())))?;
        ScenarioFile::parse(&text)
    }

    /// Settings of `config` as a scenario file. Replayed traces are not kept.
    pub fn from_run_config(config: &RunConfig) -> ScenarioFile {
        let sc = &config.scenario;
        let (link_distance_m, link_distances_m) = match &sc.link_distances {
            LinkDistances::Uniform(d) => (Some(*d), None),
            LinkDistances::PerLink(v) => (None, Some(v.clone())),
        };
        let ch = &sc.channel;
        ScenarioFile {
            schema_version: SCENARIO_SCHEMA_VERSION,
            topology: TopologySection { relay_layers: sc.relay_layers, link_distance_m, link_distances_m },
            channel: ChannelSection {
                carrier_ghz: ch.carrier_ghz,
                noise_psd_dbm_hz: ch.noise_psd_dbm_hz,
                total_bandwidth_hz: ch.total_bandwidth_hz,
                bandwidth_policy: ch.bandwidth_policy,
                shadowing_sigma_db: ch.shadowing_sigma_db,
                tx_height_m: ch.tx_height_m,
                rx_height_m: ch.rx_height_m,
                displacement_m_per_block: ch.displacement_m_per_block,
            },
            power: PowerSection { p_tot_dbm: sc.p_tot_dbm },
            services: sc
                .services
                .iter()
                .map(|s| ServiceSection {
                    packet_size_bytes: s.packet_size_bits / 8.0,
                    arrival_rate_pps: s.arrival_rate_pps,
                    backlog_mean_pkts: s.backlog_mean_pkts,
                    latency_budget_ms: s.latency_budget_s * 1e3,
                })
                .collect(),
            traffic: TrafficSection { mode: sc.traffic_mode, queue_mode: sc.queue_mode, ..TrafficSection::default() },
            simulation: SimulationSection {
                block_s: config.block_s,
                horizon_s: config.horizon_s(),
                replicas: config.replicas,
                seed: config.seed,
                schemes: config.schemes.clone(),
                cdf_points: config.cdf_points,
            },
            solver: config.solver.clone(),
            scheduler: config.scheduler.clone(),
        }
    }

    /// Builds the engine configuration. `base_dir` resolves trace paths.
    pub fn to_run_config(&self, base_dir: &Path) -> Result<RunConfig, CliError> {
        let link_distances = match (&self.topology.link_distance_m, &self.topology.link_distances_m) {
            (Some(d), None) => LinkDistances::Uniform(*d),
            (None, Some(v)) => LinkDistances::PerLink(v.clone()),
            _ => {
                return Err(invalid(
                    &["topology.link_distance_m", "topology.link_distances_m"],
                    "give exactly one of topology.link_distance_m and topology.link_distances_m",
                ))
            }
        };
        let sim = &self.simulation;
        if !(sim.block_s > 0.0 && sim.block_s.is_finite()) {
            return Err(invalid(&["simulation.block_s"], format!("block_s must be positive, got {}", sim.block_s)));
        }
        let ratio = sim.horizon_s / sim.block_s;
        let blocks = ratio.round();
        if !(blocks >= 1.0 && (ratio - blocks).abs() <= 1e-9 * ratio.max(1.0)) {
            return Err(invalid(
                &["simulation.horizon_s", "simulation.block_s"],
                format!("horizon_s ({}) must be a positive whole number of blocks of {} s", sim.horizon_s, sim.block_s),
            ));
        }
        if self.services.is_empty() {
            return Err(invalid(&["services"], "at least one [[services]] entry is required"));
        }
        let ch = &self.channel;
        let scenario = Scenario {
            relay_layers: self.topology.relay_layers,
            link_distances,
            channel: ChannelParams {
                carrier_ghz: ch.carrier_ghz,
                noise_psd_dbm_hz: ch.noise_psd_dbm_hz,
                total_bandwidth_hz: ch.total_bandwidth_hz,
                bandwidth_policy: ch.bandwidth_policy,
                shadowing_sigma_db: ch.shadowing_sigma_db,
                tx_height_m: ch.tx_height_m,
                rx_height_m: ch.rx_height_m,
                displacement_m_per_block: ch.displacement_m_per_block,
            },
            p_tot_dbm: self.power.p_tot_dbm,
            services: self
                .services
                .iter()
                .map(|s| ServiceSpec::from_bytes(s.packet_size_bytes, s.arrival_rate_pps, s.backlog_mean_pkts, s.latency_budget_ms / 1e3))
                .collect(),
            traffic_mode: self.traffic.mode,
            queue_mode: self.traffic.queue_mode,
        };
        let mut config = RunConfig {
            scenario,
            schemes: sim.schemes.clone(),
            block_s: sim.block_s,
            blocks: blocks as usize,
            replicas: sim.replicas,
            seed: sim.seed,
            solver: self.solver.clone(),
            scheduler: self.scheduler.clone(),
            cdf_points: sim.cdf_points,
            channel_trace: None,
            traffic_trace: None,
        };
        if self.traffic.channel_trace_csv.is_some() || self.traffic.traffic_trace_csv.is_some() {
            let topo = config.scenario.topology()?;
            if let Some(p) = &self.traffic.channel_trace_csv {
                let file = open_trace(base_dir, p, "traffic.channel_trace_csv")?;
                config.channel_trace = Some(ChannelTrace::read_csv(&topo, file)?);
            }
            if let Some(p) = &self.traffic.traffic_trace_csv {
                let file = open_trace(base_dir, p, "traffic.traffic_trace_csv")?;
                config.traffic_trace = Some(TrafficTrace::read_csv(&topo, config.scenario.services.len(), file)?);
            }
        }
        config.validate()?;
        Ok(config)
    }
}

fn open_trace(base_dir: &Path, path: &Path, key: &str) -> Result<fs::File, CliError> {
    let full = base_dir.join(path);
    fs::File::open(&full).map_err(|e| invalid(&[key], format!("cannot open {}: {e}", full.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    const DEFAULT: &str = include_str!("../../../scenarios/default.toml");

    #[test]
    fn shipped_default_mirrors_the_engine_defaults() {
        let file = ScenarioFile::parse(DEFAULT).unwrap();
        assert_eq!(file.to_run_config(Path::new(".")).unwrap(), RunConfig::default());
        assert_eq!(ScenarioFile::from_run_config(&RunConfig::default()), file);
    }

    #[test]
    fn missing_physical_key_is_named() {
        let text = DEFAULT.replace("p_tot_dbm = 23.0", "");
        match ScenarioFile::parse(&text) {
            Err(CliError::Validation { keys, .. }) => assert_eq!(keys, ["p_tot_dbm"]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_key_is_named() {
        let text = DEFAULT.replace("p_tot_dbm = 23.0", "p_tot_dbm = 23.0\np_tot_mw = 200.0");
        match ScenarioFile::parse(&text) {
            Err(CliError::Validation { keys, .. }) => assert_eq!(keys, ["p_tot_mw"]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn horizon_must_be_whole_blocks() {
        let text = DEFAULT.replace("horizon_s = 300.0", "horizon_s = 300.2");
        let err = ScenarioFile::parse(&text).unwrap().to_run_config(Path::new(".")).unwrap_err();
        assert!(matches!(err, CliError::Validation { ref keys, .. } if keys.contains(&"simulation.horizon_s".to_string())));
    }

    #[test]
    fn other_schema_versions_are_refused() {
        let text = DEFAULT.replace("schema_version = 1", "schema_version = 2");
        assert!(matches!(ScenarioFile::parse(&text), Err(CliError::Validation { .. })));
    }
}
