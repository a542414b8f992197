//! Block loop, Monte-Carlo replication and hop sweeps.
//!
//! Every replica owns two random streams derived from the run seed, one for
//! channel shadowing and one for traffic. All schemes of a run see the same
//! realizations; with closed-loop queues each scheme then carries its own
//! backlog forward. Replicas run on the rayon pool and are collected in
//! replica order, so results do not depend on the thread count.

mod output;
pub mod stats;
mod sweep;
mod trace;

use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{dbm_to_watts, draw_link_states, ChannelError, ChannelParams, LinkState, RateCurve};
use crate::perf::{block_metrics, empirical_cdf, link_rates, uniform_grid, BlockTraffic, CdfPoint, Decision, PerfError};
use crate::schedulers::{AllpMode, Scheduler, SchedulerConfig, SchedulerError, SchedulerKind};
use crate::solver::{ProblemInstance, Mode, SolverOptions, Status};
use crate::topology::{build_topology, LinkDistances, Topology, TopologyError};
use crate::traffic::{default_services, draw_traffic, propagate_traffic, QueueMode, ServiceSpec, TrafficError, TrafficMode, TrafficState};

pub use output::{write_run_outputs, write_sweep_csv, SummaryFile, SUMMARY_SCHEMA_VERSION};
pub use stats::{confidently_at_most, confidently_less, paired_difference, Estimate};
pub use sweep::{hop_sweep, SweepMetric, SweepRow};
pub use trace::{ChannelTrace, TrafficTrace};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid run configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Traffic(#[from] TrafficError),
    #[error(transparent)]
    Perf(#[from] PerfError),
    #[error("replica {replica}, block {block}, scheme {scheme}: {source}")]
    Block { replica: usize, block: usize, scheme: SchedulerKind, source: SchedulerError },
    #[error("trace: {0}")]
    Trace(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Physical setup of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub relay_layers: usize,
    pub link_distances: LinkDistances,
    pub channel: ChannelParams,
    /// Per-node transmit power cap.
    pub p_tot_dbm: f64,
    pub services: Vec<ServiceSpec>,
    pub traffic_mode: TrafficMode,
    pub queue_mode: QueueMode,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            relay_layers: 2,
            link_distances: LinkDistances::default(),
            channel: ChannelParams::default(),
            p_tot_dbm: 23.0,
            services: default_services(),
            traffic_mode: TrafficMode::default(),
            queue_mode: QueueMode::default(),
        }
    }
}

impl Scenario {
    pub fn p_tot_w(&self) -> f64 {
        dbm_to_watts(self.p_tot_dbm)
    }

    pub fn topology(&self) -> Result<Topology, EngineError> {
        Ok(build_topology(self.relay_layers, &self.link_distances)?)
    }

    pub fn budgets_s(&self) -> Vec<f64> {
        self.services.iter().map(|s| s.latency_budget_s).collect()
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        self.topology()?;
        self.channel.validate()?;
        if !self.p_tot_dbm.is_finite() {
            return Err(EngineError::Config(format!("p_tot_dbm must be finite, got {}", self.p_tot_dbm)));
        }
        if self.services.is_empty() {
            return Err(EngineError::Config("at least one service is required".into()));
        }
        for (q, s) in self.services.iter().enumerate() {
            s.validate(q)?;
        }
        Ok(())
    }
}

/// Everything a run needs.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub scenario: Scenario,
    pub schemes: Vec<SchedulerKind>,
    pub block_s: f64,
    pub blocks: usize,
    pub replicas: usize,
    pub seed: u64,
    pub solver: SolverOptions,
    pub scheduler: SchedulerConfig,
    /// Points of the latency grid the CDFs are evaluated on.
    pub cdf_points: usize,
    /// Replayed losses; replaces the shadowing draws of every replica.
    pub channel_trace: Option<ChannelTrace>,
    /// Replayed arrivals and backlog; replaces the traffic draws of every replica.
    pub traffic_trace: Option<TrafficTrace>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            scenario: Scenario::default(),
            schemes: SchedulerKind::ALL.to_vec(),
            block_s: 0.5,
            blocks: 600,
            replicas: 20,
            seed: 0,
            solver: SolverOptions::default(),
            scheduler: SchedulerConfig::default(),
            cdf_points: 201,
            channel_trace: None,
            traffic_trace: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        self.scenario.validate()?;
        self.scheduler.validate().map_err(|e| EngineError::Config(e.to_string()))?;
        if !(self.block_s > 0.0 && self.block_s.is_finite()) {
            return Err(EngineError::Config(format!("block_s must be positive, got {}", self.block_s)));
        }
        if self.blocks == 0 {
            return Err(EngineError::Config("blocks must be at least 1".into()));
        }
        if self.replicas == 0 {
            return Err(EngineError::Config("replicas must be at least 1".into()));
        }
        if self.schemes.is_empty() {
            return Err(EngineError::Config("at least one scheme is required".into()));
        }
        if self.cdf_points < 2 {
            return Err(EngineError::Config("cdf_points must be at least 2".into()));
        }
        Ok(())
    }

    /// Simulated horizon in seconds.
    pub fn horizon_s(&self) -> f64 {
        self.blocks as f64 * self.block_s
    }
}

/// One scheme's outcome for one block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockRecord {
    pub replica: usize,
    pub block: usize,
    pub scheme: SchedulerKind,
    pub status: Status,
    pub allp_mode: Option<AllpMode>,
    pub flagged: bool,
    /// Worst counted-path latency per service.
    pub worst_latency_s: Vec<f64>,
    /// `path_latency_s[q][b]`; infinite for a path that does not count and
    /// crosses a silenced link.
    pub path_latency_s: Vec<Vec<f64>>,
    pub routed: Vec<Vec<bool>>,
    pub total_power_w: f64,
    pub within_budget: Vec<bool>,
    /// Largest relative constraint violation of the decision.
    pub constraint_violation: f64,
    /// Kept for replica 0 only.
    pub decision: Option<Decision>,
}

/// Horizon averages of one scheme across replicas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeSummary {
    pub scheme: SchedulerKind,
    pub avg_latency_ms: Vec<Estimate>,
    pub avg_power_mw: Estimate,
    /// `replica_avg_latency_s[q][r]`.
    pub replica_avg_latency_s: Vec<Vec<f64>>,
    pub replica_avg_power_w: Vec<f64>,
    pub blocks: usize,
    pub infeasible_blocks: usize,
    pub flagged_blocks: usize,
    pub budget_exceeded_blocks: usize,
    /// Share of blocks the adaptive controller ran in min-power mode.
    pub min_power_mode_share: Option<f64>,
}

impl SchemeSummary {
    /// Sum over services of each replica's average latency.
    pub fn replica_total_latency_s(&self) -> Vec<f64> {
        let r = self.replica_avg_power_w.len();
        (0..r).map(|i| self.replica_avg_latency_s.iter().map(|s| s[i]).sum()).collect()
    }
}

/// Latency CDF of one scheme and service, pooled over replicas and blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdfSeries {
    pub scheme: SchedulerKind,
    pub service: usize,
    pub points: Vec<CdfPoint>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub config: RunConfig,
    pub topology: Topology,
    pub schemes: Vec<SchemeSummary>,
    /// Ordered by replica, block, then scheme in configuration order.
    pub records: Vec<BlockRecord>,
    pub cdf: Vec<CdfSeries>,
    /// Realizations of replica 0.
    pub channel_trace: ChannelTrace,
    pub traffic_trace: TrafficTrace,
}

impl RunReport {
    pub fn scheme(&self, kind: SchedulerKind) -> Option<&SchemeSummary> {
        self.schemes.iter().find(|s| s.scheme == kind)
    }

    pub fn records_of(&self, kind: SchedulerKind) -> impl Iterator<Item = &BlockRecord> {
        self.records.iter().filter(move |r| r.scheme == kind)
    }
}

const CHANNEL_STREAM: u64 = 0;
const TRAFFIC_STREAM: u64 = 1;

/// Named substream of the run seed for one replica.
fn substream(seed: u64, replica: usize, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2 * replica as u64 + stream);
    rng
}

struct ReplicaOutput {
    records: Vec<BlockRecord>,
    channel: Vec<Vec<LinkState>>,
    traffic: Vec<TrafficState>,
}

/// Packets each node can send per service this block: `⌊α·D·T_c / M⌋`
/// summed over its links, capped by what is queued.
fn served_packets(topo: &Topology, d: &Decision, rates: &[f64], state: &TrafficState, packet_bits: &[f64], block_s: f64) -> Vec<Vec<u64>> {
    (0..topo.num_nodes())
        .map(|x| {
            (0..packet_bits.len())
                .map(|q| {
                    let a = d.alpha(x, q);
                    let cap: u64 = (0..topo.out_degree(x))
                        .map(|k| (a[k] * rates[topo.link_index(x, k)] * block_s / packet_bits[q]).floor() as u64)
                        .sum();
                    cap.min(state.arrivals[x][q] + state.backlog[x][q])
                })
                .collect()
        })
        .collect()
}

/// The first `count` block instances replica `replica` would see, with fresh
/// backlog every block and each transmitter's own traffic as its load.
pub fn block_instances(cfg: &RunConfig, replica: usize, count: usize) -> Result<Vec<ProblemInstance>, EngineError> {
    cfg.scenario.validate()?;
    let sc = &cfg.scenario;
    let base = sc.topology()?;
    let mut channel_rng = substream(cfg.seed, replica, CHANNEL_STREAM);
    let mut traffic_rng = substream(cfg.seed, replica, TRAFFIC_STREAM);
    (0..count)
        .map(|n| {
            let shift = sc.channel.displacement_m_per_block * n as f64;
            let topo = if shift != 0.0 { base.displaced(shift) } else { base.clone() };
            let links = draw_link_states(&topo, &sc.channel, n, &mut channel_rng)?;
            let curves = links.iter().map(|l| RateCurve::from_state(l, &sc.channel)).collect::<Result<Vec<_>, _>>()?;
            let state = draw_traffic(&topo, &sc.services, cfg.block_s, n, TrafficMode::PerNode, true, &mut traffic_rng)?;
            Ok(ProblemInstance {
                topology: topo,
                curves,
                traffic: BlockTraffic::from_state(&state, &sc.services),
                p_tot_w: sc.p_tot_w(),
                budgets_s: sc.budgets_s(),
                mode: Mode::MinLatency,
                block: n,
            })
        })
        .collect()
}

fn run_replica(cfg: &RunConfig, base: &Topology, replica: usize) -> Result<ReplicaOutput, EngineError> {
    let sc = &cfg.scenario;
    let services = sc.services.len();
    let packet_bits: Vec<f64> = sc.services.iter().map(|s| s.packet_size_bits).collect();
    let budgets = sc.budgets_s();
    let p_tot_w = sc.p_tot_w();
    let mut channel_rng = substream(cfg.seed, replica, CHANNEL_STREAM);
    let mut traffic_rng = substream(cfg.seed, replica, TRAFFIC_STREAM);
    let mut schedulers: Vec<Scheduler> = cfg.schemes.iter().map(|&k| Scheduler::new(k, &cfg.scheduler)).collect();
    let mut backlog: Vec<Option<Vec<Vec<u64>>>> = vec![None; cfg.schemes.len()];
    let mut previous: Vec<Option<Decision>> = vec![None; cfg.schemes.len()];
    let keep = replica == 0;
    let mut out = ReplicaOutput { records: Vec::new(), channel: Vec::new(), traffic: Vec::new() };

    for n in 0..cfg.blocks {
        let shift = sc.channel.displacement_m_per_block * n as f64;
        let topo = if shift != 0.0 { base.displaced(shift) } else { base.clone() };
        let mut links = draw_link_states(&topo, &sc.channel, n, &mut channel_rng)?;
        if let Some(trace) = &cfg.channel_trace {
            for (l, &loss) in links.iter_mut().zip(trace.losses(n)?) {
                l.loss_db = loss;
            }
        }
        let curves = links.iter().map(|l| RateCurve::from_state(l, &sc.channel)).collect::<Result<Vec<_>, _>>()?;
        let draw_backlog = sc.queue_mode == QueueMode::Trace || n == 0;
        let mut shared = draw_traffic(&topo, &sc.services, cfg.block_s, n, sc.traffic_mode, draw_backlog, &mut traffic_rng)?;
        if let Some(trace) = &cfg.traffic_trace {
            shared = trace.state(n)?.clone();
            shared.block = n;
        }
        if keep {
            out.channel.push(links.clone());
            out.traffic.push(shared.clone());
        }

        for (i, sched) in schedulers.iter_mut().enumerate() {
            let mut state = shared.clone();
            if let Some(carried) = &backlog[i] {
                state.backlog = carried.clone();
            }
            let own = state.loads();
            let loads = match sc.traffic_mode {
                TrafficMode::PerNode => own,
                TrafficMode::FlowPropagated => {
                    let d = previous[i].clone().unwrap_or_else(|| Decision::uniform(&topo, services, p_tot_w, n));
                    propagate_traffic(&topo, &d, &own)?
                }
            };
            let inst = ProblemInstance {
                topology: topo.clone(),
                curves: curves.clone(),
                traffic: BlockTraffic { loads_pkts: loads, packet_bits: packet_bits.clone() },
                p_tot_w,
                budgets_s: budgets.clone(),
                mode: Mode::MinLatency,
                block: n,
            };
            let scheme = sched.kind;
            let schedule =
                sched.step(&inst, &cfg.solver).map_err(|source| EngineError::Block { replica, block: n, scheme, source })?;
            let rates = link_rates(&topo, &curves, &schedule.decision);
            let m = block_metrics(&topo, &schedule.decision, &inst.traffic, &rates, &budgets)?;
            if sc.queue_mode == QueueMode::ClosedLoop {
                let served = served_packets(&topo, &schedule.decision, &rates, &state, &packet_bits, cfg.block_s);
                let next: Vec<Vec<u64>> = (0..topo.num_nodes())
                    .map(|x| (0..services).map(|q| state.backlog[x][q] + state.arrivals[x][q] - served[x][q]).collect())
                    .collect();
                backlog[i] = Some(next);
            }
            if sc.traffic_mode == TrafficMode::FlowPropagated {
                previous[i] = Some(schedule.decision.clone());
            }
            out.records.push(BlockRecord {
                replica,
                block: n,
                scheme,
                status: schedule.status,
                allp_mode: schedule.allp_mode,
                flagged: schedule.flagged,
                worst_latency_s: m.worst_latency_s,
                path_latency_s: m.path_latency_s,
                routed: m.routed,
                total_power_w: m.total_power_w,
                within_budget: m.within_budget,
                constraint_violation: m.constraints.max_violation(),
                decision: keep.then_some(schedule.decision),
            });
        }
    }
    Ok(out)
}

fn summarize_scheme(cfg: &RunConfig, kind: SchedulerKind, per_replica: &[Vec<&BlockRecord>]) -> SchemeSummary {
    let services = cfg.scenario.services.len();
    let mut lat = vec![Vec::with_capacity(per_replica.len()); services];
    let mut pow = Vec::with_capacity(per_replica.len());
    let (mut infeasible, mut flagged, mut exceeded, mut lp, mut total) = (0, 0, 0, 0, 0);
    for recs in per_replica {
        let n = recs.len() as f64;
        for (q, l) in lat.iter_mut().enumerate() {
            l.push(recs.iter().map(|r| r.worst_latency_s[q]).sum::<f64>() / n);
        }
        pow.push(recs.iter().map(|r| r.total_power_w).sum::<f64>() / n);
        for r in recs {
            total += 1;
            infeasible += usize::from(r.status == Status::Infeasible);
            flagged += usize::from(r.flagged);
            exceeded += usize::from(r.within_budget.iter().any(|ok| !ok));
            lp += usize::from(r.allp_mode == Some(AllpMode::MinPower));
        }
    }
    SchemeSummary {
        scheme: kind,
        avg_latency_ms: lat.iter().map(|l| Estimate::from_samples(l).scaled(1e3)).collect(),
        avg_power_mw: Estimate::from_samples(&pow).scaled(1e3),
        replica_avg_latency_s: lat,
        replica_avg_power_w: pow,
        blocks: total,
        infeasible_blocks: infeasible,
        flagged_blocks: flagged,
        budget_exceeded_blocks: exceeded,
        min_power_mode_share: (kind == SchedulerKind::Allp).then(|| lp as f64 / total.max(1) as f64),
    }
}

/// Runs every configured scheme over all replicas.
pub fn run(config: &RunConfig) -> Result<RunReport, EngineError> {
    config.validate()?;
    let base = config.scenario.topology()?;
    let outputs: Vec<ReplicaOutput> =
        (0..config.replicas).into_par_iter().map(|r| run_replica(config, &base, r)).collect::<Result<_, _>>()?;

    let mut schemes = Vec::with_capacity(config.schemes.len());
    for &kind in &config.schemes {
        let per_replica: Vec<Vec<&BlockRecord>> =
            outputs.iter().map(|o| o.records.iter().filter(|r| r.scheme == kind).collect()).collect();
        schemes.push(summarize_scheme(config, kind, &per_replica));
    }

    let services = config.scenario.services.len();
    let records: Vec<BlockRecord> = outputs.iter().flat_map(|o| o.records.iter().cloned()).collect();
    let top = records.iter().flat_map(|r| r.worst_latency_s.iter().copied()).filter(|v| v.is_finite()).fold(0.0, f64::max);
    let grid = uniform_grid(0.0, if top > 0.0 { top } else { 1e-3 }, config.cdf_points);
    let mut cdf = Vec::new();
    for &kind in &config.schemes {
        for q in 0..services {
            let series: Vec<f64> = records.iter().filter(|r| r.scheme == kind).map(|r| r.worst_latency_s[q]).collect();
            cdf.push(CdfSeries { scheme: kind, service: q, points: empirical_cdf(&series, &grid) });
        }
    }
    let first = &outputs[0];
    Ok(RunReport {
        config: config.clone(),
        topology: base,
        schemes,
        records,
        cdf,
        channel_trace: ChannelTrace::from_states(&first.channel),
        traffic_trace: TrafficTrace::from_states(&first.traffic),
    })
}

/// Runs the listed schemes on shared realizations.
pub fn compare(config: &RunConfig, schemes: &[SchedulerKind]) -> Result<RunReport, EngineError> {
    run(&RunConfig { schemes: schemes.to_vec(), ..config.clone() })
}

/// Files written for a run, in write order.
pub type WrittenFiles = Vec<PathBuf>;

#[cfg(test)]
mod tests;
