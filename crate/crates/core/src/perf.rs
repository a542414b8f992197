//! Latency and power model: per-hop latency, end-to-end path latency, block
//! metrics and horizon summaries.
//!
//! A hop carrying a fraction `α` of a node's `λ + n` packets of `M` bits over
//! a link of rate `D` takes `α·(λ + n)·M / D` seconds; a path's latency is the
//! sum over its hops. A service's block latency is the worst latency over the
//! paths that carry it (see [`Routing`]).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{watts_to_dbm, RateCurve};
use crate::topology::{enumerate_paths, PathId, Topology};
use crate::traffic::{ServiceSpec, TrafficState};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PerfError {
    #[error("link has zero rate but carries {bits} bits")]
    InfeasibleLink { bits: f64 },
    #[error("negative input to the latency model: {0}")]
    Negative(String),
    #[error("cannot summarize an empty run")]
    EmptyRun,
    #[error("shape mismatch: {0}")]
    Shape(String),
}

/// Which end-to-end paths count toward a service's worst-path latency.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Routing {
    /// Paths with a positive split ratio on every hop.
    Split,
    /// An explicit path set, all of which count whatever the split ratios.
    Fixed(Vec<usize>),
}

/// How per-node power must relate to the node cap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PowerRule {
    /// Every transmitting node spends exactly its cap.
    Full,
    /// Every node spends at most its cap.
    Capped,
}

/// Split ratios and transmit powers for one block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub block: usize,
    pub rule: PowerRule,
    /// Per-node power cap, watts.
    pub cap_w: f64,
    pub routing: Routing,
    services: usize,
    /// `alpha[node * services + q][k]`.
    alpha: Vec<[f64; 2]>,
    /// `power[node][k]`, watts; `k = 1` is unused for last-layer relays.
    power_w: Vec<[f64; 2]>,
}

impl Decision {
    /// Equal splits everywhere and `node_power_w` spread evenly over each
    /// node's outgoing links.
    pub fn uniform(topo: &Topology, services: usize, node_power_w: f64, block: usize) -> Decision {
        let nodes = topo.num_nodes();
        let mut alpha = Vec::with_capacity(nodes * services);
        let mut power_w = Vec::with_capacity(nodes);
        for x in 0..nodes {
            let two = topo.out_degree(x) == 2;
            for _ in 0..services {
                alpha.push(if two { [0.5, 0.5] } else { [1.0, 0.0] });
            }
            power_w.push(if two { [node_power_w / 2.0, node_power_w / 2.0] } else { [node_power_w, 0.0] });
        }
        Decision { block, rule: PowerRule::Full, cap_w: node_power_w, routing: Routing::Split, services, alpha, power_w }
    }

    pub fn num_services(&self) -> usize {
        self.services
    }

    pub fn num_nodes(&self) -> usize {
        self.power_w.len()
    }

    pub fn alpha(&self, node: usize, q: usize) -> [f64; 2] {
        self.alpha[node * self.services + q]
    }

    pub fn set_alpha(&mut self, node: usize, q: usize, a: [f64; 2]) {
        self.alpha[node * self.services + q] = a;
    }

    pub fn power(&self, node: usize) -> [f64; 2] {
        self.power_w[node]
    }

    pub fn set_power(&mut self, node: usize, p: [f64; 2]) {
        self.power_w[node] = p;
    }

    pub fn power_dbm(&self, node: usize, k: usize) -> f64 {
        watts_to_dbm(self.power_w[node][k].max(0.0)).unwrap_or(f64::NEG_INFINITY)
    }

    pub fn total_power_w(&self) -> f64 {
        self.power_w.iter().map(|p| p[0] + p[1]).sum()
    }

    /// Per-link transmit powers in flat link order.
    pub fn link_powers(&self, topo: &Topology) -> Vec<f64> {
        let mut out = vec![0.0; topo.num_links()];
        for x in 0..topo.num_nodes() {
            for k in 0..topo.out_degree(x) {
                out[topo.link_index(x, k)] = self.power_w[x][k];
            }
        }
        out
    }

    /// Whether path `b` counts toward service `q`.
    pub fn is_routed(&self, topo: &Topology, b: PathId, q: usize) -> bool {
        match &self.routing {
            Routing::Fixed(paths) => paths.contains(&b.index),
            Routing::Split => topo.path_hops(b).into_iter().all(|(x, k)| self.alpha(x, q)[k] > 0.0),
        }
    }

    /// Nodes lying on a routed path of some service.
    pub fn transmitting_nodes(&self, topo: &Topology) -> Vec<bool> {
        let mut on = vec![false; topo.num_nodes()];
        for b in enumerate_paths(topo) {
            if (0..self.services).any(|q| self.is_routed(topo, b, q)) {
                for x in topo.path_nodes(b) {
                    on[x] = true;
                }
            }
        }
        on
    }
}

/// Traffic each node transmits this block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockTraffic {
    /// `loads_pkts[node][q]`: `λ + n` in packets (fractional in flow mode).
    pub loads_pkts: Vec<Vec<f64>>,
    pub packet_bits: Vec<f64>,
}

impl BlockTraffic {
    pub fn from_state(state: &TrafficState, services: &[ServiceSpec]) -> BlockTraffic {
        BlockTraffic { loads_pkts: state.loads(), packet_bits: services.iter().map(|s| s.packet_size_bits).collect() }
    }

    pub fn bits(&self, node: usize, q: usize) -> f64 {
        self.loads_pkts[node][q] * self.packet_bits[q]
    }

    pub fn num_services(&self) -> usize {
        self.packet_bits.len()
    }
}

/// Link rates in bits/s (flat link order) for a decision's powers.
pub fn link_rates(topo: &Topology, curves: &[RateCurve], decision: &Decision) -> Vec<f64> {
    decision.link_powers(topo).iter().zip(curves).map(|(&p, c)| c.rate(p)).collect()
}

/// Transmission time of a hop. Zero traffic takes zero time even on a dead link.
pub fn hop_latency(alpha: f64, arrivals: f64, backlog: f64, packet_bits: f64, rate_bps: f64) -> Result<f64, PerfError> {
    if alpha < 0.0 || arrivals < 0.0 || backlog < 0.0 || packet_bits < 0.0 || rate_bps < 0.0 {
        return Err(PerfError::Negative(format!(
            "alpha={alpha} arrivals={arrivals} backlog={backlog} bits={packet_bits} rate={rate_bps}"
        )));
    }
    let bits = alpha * (arrivals + backlog) * packet_bits;
    if bits == 0.0 {
        return Ok(0.0);
    }
    if rate_bps == 0.0 {
        return Err(PerfError::InfeasibleLink { bits });
    }
    Ok(bits / rate_bps)
}

/// Sum of hop latencies along path `b` for service `q`.
pub fn path_latency(
    topo: &Topology,
    decision: &Decision,
    traffic: &BlockTraffic,
    rates: &[f64],
    b: PathId,
    q: usize,
) -> Result<f64, PerfError> {
    topo.path_hops(b).into_iter().try_fold(0.0, |acc, (x, k)| {
        let l = hop_latency(decision.alpha(x, q)[k], traffic.loads_pkts[x][q], 0.0, traffic.packet_bits[q], rates[topo.link_index(x, k)])?;
        Ok(acc + l)
    })
}

/// Outcome of checking a decision against the split and power constraints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstraintReport {
    /// Worst violation of `0 ≤ α ≤ 1`.
    pub alpha_range: f64,
    /// Worst `|Σ_k α − 1|`.
    pub alpha_sum: f64,
    /// Worst violation of `0 ≤ P ≤ cap`, relative to the cap.
    pub power_range: f64,
    /// Worst violation of the per-node power rule, relative to the cap.
    pub node_power: f64,
}

impl ConstraintReport {
    pub fn max_violation(&self) -> f64 {
        self.alpha_range.max(self.alpha_sum).max(self.power_range).max(self.node_power)
    }

    pub fn satisfied(&self, tol: f64) -> bool {
        self.max_violation() <= tol
    }
}

/// Checks split ranges, split sums, power ranges and the per-node power rule.
/// Under [`PowerRule::Full`] transmitting nodes must spend exactly the cap
/// and idle nodes nothing.
pub fn check_decision(topo: &Topology, d: &Decision) -> ConstraintReport {
    let mut r = ConstraintReport { alpha_range: 0.0, alpha_sum: 0.0, power_range: 0.0, node_power: 0.0 };
    let cap = d.cap_w.max(f64::MIN_POSITIVE);
    let transmitting = d.transmitting_nodes(topo);
    for x in 0..topo.num_nodes() {
        let deg = topo.out_degree(x);
        for q in 0..d.num_services() {
            let a = d.alpha(x, q);
            for &v in &a[..deg] {
                r.alpha_range = r.alpha_range.max((-v).max(v - 1.0).max(0.0));
            }
            if deg == 1 {
                r.alpha_sum = r.alpha_sum.max((a[0] - 1.0).abs()).max(a[1].abs());
            } else {
                r.alpha_sum = r.alpha_sum.max((a[0] + a[1] - 1.0).abs());
            }
        }
        let p = d.power(x);
        for &v in &p[..deg] {
            r.power_range = r.power_range.max((-v).max(v - cap).max(0.0) / cap);
        }
        if deg == 1 {
            r.power_range = r.power_range.max(p[1].abs() / cap);
        }
        let sum = p[0] + p[1];
        let excess = match d.rule {
            PowerRule::Full if transmitting[x] => (sum - cap).abs(),
            PowerRule::Full => sum.abs(),
            PowerRule::Capped => (sum - cap).max(0.0),
        };
        r.node_power = r.node_power.max(excess / cap);
    }
    r
}

/// Relative rounding slack allowed when checking a latency budget.
pub const BUDGET_RTOL: f64 = 1e-9;

/// Everything measured for one block under one decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockMetrics {
    pub block: usize,
    /// `path_latency_s[q][b]`; infinite for a path that does not count and
    /// crosses a link without power.
    pub path_latency_s: Vec<Vec<f64>>,
    /// `routed[q][b]`: whether the path counts toward the service.
    pub routed: Vec<Vec<bool>>,
    /// Worst routed-path latency per service.
    pub worst_latency_s: Vec<f64>,
    pub total_power_w: f64,
    /// `node_power_w[node][k]`.
    pub node_power_w: Vec<[f64; 2]>,
    pub constraints: ConstraintReport,
    /// Whether each service met its latency budget.
    pub within_budget: Vec<bool>,
}

pub fn block_metrics(
    topo: &Topology,
    decision: &Decision,
    traffic: &BlockTraffic,
    rates: &[f64],
    budgets_s: &[f64],
) -> Result<BlockMetrics, PerfError> {
    let services = decision.num_services();
    if traffic.num_services() != services || budgets_s.len() != services || rates.len() != topo.num_links() {
        return Err(PerfError::Shape("decision, traffic, budgets and rates disagree".into()));
    }
    let paths = enumerate_paths(topo);
    let mut path_latency_s = vec![vec![0.0; paths.len()]; services];
    let mut routed = vec![vec![false; paths.len()]; services];
    let mut worst_latency_s = vec![0.0f64; services];
    for q in 0..services {
        for &b in &paths {
            let on = decision.is_routed(topo, b, q);
            // A path that does not count may cross a silenced link.
            let u = match path_latency(topo, decision, traffic, rates, b, q) {
                Err(PerfError::InfeasibleLink { .. }) if !on => f64::INFINITY,
                r => r?,
            };
            path_latency_s[q][b.index] = u;
            routed[q][b.index] = on;
            if routed[q][b.index] {
                worst_latency_s[q] = worst_latency_s[q].max(u);
            }
        }
    }
    let within_budget = worst_latency_s.iter().zip(budgets_s).map(|(w, l)| *w <= *l * (1.0 + BUDGET_RTOL)).collect();
    Ok(BlockMetrics {
        block: decision.block,
        path_latency_s,
        routed,
        worst_latency_s,
        total_power_w: decision.total_power_w(),
        node_power_w: (0..topo.num_nodes()).map(|x| decision.power(x)).collect(),
        constraints: check_decision(topo, decision),
        within_budget,
    })
}

/// One point of an empirical CDF.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CdfPoint {
    pub latency_s: f64,
    pub cdf: f64,
}

/// Fraction of `series` at or below each grid value.
pub fn empirical_cdf(series: &[f64], grid: &[f64]) -> Vec<CdfPoint> {
    let mut sorted = series.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len().max(1) as f64;
    grid.iter()
        .map(|&x| CdfPoint { latency_s: x, cdf: sorted.partition_point(|&v| v <= x) as f64 / n })
        .collect()
}

/// `points` evenly spaced values spanning `[lo, hi]`.
pub fn uniform_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![hi],
        _ => (0..points).map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64).collect(),
    }
}

/// Horizon averages of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub blocks: usize,
    pub avg_latency_s: Vec<f64>,
    pub avg_power_w: f64,
    /// `latency_series_s[q][n]`.
    pub latency_series_s: Vec<Vec<f64>>,
    pub power_series_w: Vec<f64>,
    /// `cdf[q]` evaluated on the supplied grid.
    pub cdf: Vec<Vec<CdfPoint>>,
}

pub fn summarize(blocks: &[BlockMetrics], grid: &[f64]) -> Result<RunSummary, PerfError> {
    let first = blocks.first().ok_or(PerfError::EmptyRun)?;
    let services = first.worst_latency_s.len();
    let n = blocks.len() as f64;
    let latency_series_s: Vec<Vec<f64>> =
        (0..services).map(|q| blocks.iter().map(|b| b.worst_latency_s[q]).collect()).collect();
    let power_series_w: Vec<f64> = blocks.iter().map(|b| b.total_power_w).collect();
    Ok(RunSummary {
        blocks: blocks.len(),
        avg_latency_s: latency_series_s.iter().map(|s| s.iter().sum::<f64>() / n).collect(),
        avg_power_w: power_series_w.iter().sum::<f64>() / n,
        cdf: latency_series_s.iter().map(|s| empirical_cdf(s, grid)).collect(),
        latency_series_s,
        power_series_w,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{build_topology, LinkDistances};
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1e-300)
    }

    #[test]
    fn hop_latency_examples() {
        assert!(close(hop_latency(1.0, 1.0, 0.0, 2000.0, 1e6).unwrap(), 2e-3, 1e-15));
        assert_eq!(hop_latency(0.0, 5.0, 5.0, 2000.0, 0.0).unwrap(), 0.0);
        assert_eq!(hop_latency(1.0, 0.0, 0.0, 2000.0, 0.0).unwrap(), 0.0);
        assert!(close(hop_latency(0.5, 10.0, 2.0, 800.0, 4.8e6).unwrap(), 1e-3, 1e-12));
        assert!(matches!(hop_latency(1.0, 1.0, 0.0, 8.0, 0.0), Err(PerfError::InfeasibleLink { .. })));
        assert!(hop_latency(-0.1, 1.0, 0.0, 8.0, 1.0).is_err());
    }

    fn symmetric(h: usize, services: usize) -> (Topology, Vec<RateCurve>, BlockTraffic) {
        let t = build_topology(h, &LinkDistances::default()).unwrap();
        let curves = vec![RateCurve::new(50e6, 100.0, -174.0).unwrap(); t.num_links()];
        let traffic = BlockTraffic { loads_pkts: vec![vec![100.0; services]; t.num_nodes()], packet_bits: vec![2000.0; services] };
        (t, curves, traffic)
    }

    #[test]
    fn h1_path_latency_adds_hops() {
        let t = build_topology(1, &LinkDistances::default()).unwrap();
        let mut d = Decision::uniform(&t, 1, 1.0, 0);
        d.set_alpha(0, 0, [1.0, 0.0]);
        let traffic = BlockTraffic { loads_pkts: vec![vec![1.0]; 3], packet_bits: vec![1000.0] };
        let rates = vec![1e6; t.num_links()];
        let u = path_latency(&t, &d, &traffic, &rates, PathId { index: 0 }, 0).unwrap();
        assert!(close(u, 2e-3, 1e-12));
    }

    #[test]
    fn path_with_zero_split_has_zero_latency() {
        let (t, curves, mut traffic) = symmetric(2, 1);
        for row in &mut traffic.loads_pkts[1..] {
            row[0] = 0.0;
        }
        let mut d = Decision::uniform(&t, 1, 0.2, 0);
        d.set_alpha(0, 0, [1.0, 0.0]);
        let rates = link_rates(&t, &curves, &d);
        // path 1 leaves the source over link 1, which carries nothing
        assert_eq!(path_latency(&t, &d, &traffic, &rates, PathId { index: 1 }, 0).unwrap(), 0.0);
    }

    #[test]
    fn symmetric_split_equalizes_paths() {
        let (t, curves, traffic) = symmetric(2, 1);
        let d = Decision::uniform(&t, 1, 0.2, 0);
        let rates = link_rates(&t, &curves, &d);
        let m = block_metrics(&t, &d, &traffic, &rates, &[0.03]).unwrap();
        let u = &m.path_latency_s[0];
        assert!(u.iter().all(|&v| close(v, u[0], 1e-12)));
        assert!(close(m.worst_latency_s[0], u[0], 1e-12));
        assert!(m.constraints.satisfied(1e-12));
    }

    #[test]
    fn starved_path_dominates_when_routed() {
        let (t, curves, traffic) = symmetric(1, 1);
        let mut d = Decision::uniform(&t, 1, 0.2, 0);
        d.set_power(0, [0.19, 0.01]);
        let rates = link_rates(&t, &curves, &d);
        let m = block_metrics(&t, &d, &traffic, &rates, &[0.03]).unwrap();
        assert_eq!(m.worst_latency_s[0], m.path_latency_s[0][1]);
        assert!(m.path_latency_s[0][1] > m.path_latency_s[0][0]);

        // Not routed: the starved path no longer counts.
        d.set_alpha(0, 0, [1.0, 0.0]);
        let m = block_metrics(&t, &d, &traffic, &rates, &[0.03]).unwrap();
        assert!(!m.routed[0][1]);
        assert_eq!(m.worst_latency_s[0], m.path_latency_s[0][0]);
    }

    #[test]
    fn summary_examples() {
        assert!(matches!(summarize(&[], &[]), Err(PerfError::EmptyRun)));
        let (t, curves, traffic) = symmetric(1, 1);
        let d = Decision::uniform(&t, 1, 0.2, 0);
        let rates = link_rates(&t, &curves, &d);
        let m = block_metrics(&t, &d, &traffic, &rates, &[0.03]).unwrap();
        let s = summarize(&[m.clone(), m.clone(), m.clone()], &[]).unwrap();
        assert!(close(s.avg_latency_s[0], m.worst_latency_s[0], 1e-15));
        assert!(close(s.avg_power_w, m.total_power_w, 1e-15));

        let mut a = m.clone();
        a.worst_latency_s = vec![2e-3];
        let mut b = m;
        b.worst_latency_s = vec![4e-3];
        let s = summarize(&[a, b], &[]).unwrap();
        assert!(close(s.avg_latency_s[0], 3e-3, 1e-12));
    }

    #[test]
    fn cdf_median_of_symmetric_series() {
        let series: Vec<f64> = (0..1001).map(|i| i as f64 * 1e-5).collect();
        let cdf = empirical_cdf(&series, &[5e-3]);
        assert!((cdf[0].cdf - 0.5).abs() < 2e-3);
        let cdf = empirical_cdf(&series, &uniform_grid(0.0, 0.01, 11));
        assert!(cdf.windows(2).all(|w| w[1].cdf >= w[0].cdf));
        assert_eq!(cdf.last().unwrap().cdf, 1.0);
    }

    #[test]
    fn full_rule_requires_idle_nodes_silent() {
        let t = build_topology(2, &LinkDistances::default()).unwrap();
        let mut d = Decision::uniform(&t, 1, 0.2, 0);
        d.routing = Routing::Fixed(vec![0]);
        assert!(check_decision(&t, &d).node_power > 0.5);
        for x in [2, 4] {
            d.set_power(x, [0.0, 0.0]);
        }
        d.set_power(0, [0.2, 0.0]);
        d.set_power(1, [0.2, 0.0]);
        assert!(check_decision(&t, &d).satisfied(1e-12));
    }

    /// Depth-first enumeration that never materializes path ids.
    fn dfs_max(t: &Topology, d: &Decision, tr: &BlockTraffic, rates: &[f64], q: usize) -> f64 {
        fn go(t: &Topology, d: &Decision, tr: &BlockTraffic, rates: &[f64], q: usize, node: usize, acc: f64) -> f64 {
            let mut best = f64::NEG_INFINITY;
            for k in 0..t.out_degree(node) {
                let bits = d.alpha(node, q)[k] * tr.loads_pkts[node][q] * tr.packet_bits[q];
                let hop = if bits == 0.0 { 0.0 } else { bits / rates[t.link_index(node, k)] };
                let v = match t.child(node, k) {
                    Some(c) => go(t, d, tr, rates, q, c, acc + hop),
                    None => acc + hop,
                };
                best = best.max(v);
            }
            best
        }
        go(t, d, tr, rates, q, 0, 0.0)
    }

    proptest! {
        #[test]
        fn worst_path_matches_independent_iterator(
            h in 1usize..=4,
            raw in proptest::collection::vec(0.01f64..0.99, 40),
            losses in proptest::collection::vec(90.0f64..115.0, 16),
        ) {
            let t = build_topology(h, &LinkDistances::default()).unwrap();
            let curves: Vec<RateCurve> = (0..t.num_links()).map(|i| RateCurve::new(50e6, losses[i % 16], -174.0).unwrap()).collect();
            let mut d = Decision::uniform(&t, 2, 0.2, 0);
            d.routing = Routing::Fixed((0..t.num_paths()).collect());
            for x in 0..t.num_nodes() {
                if t.out_degree(x) == 2 {
                    let s = raw[x % raw.len()];
                    d.set_power(x, [0.2 * s, 0.2 * (1.0 - s)]);
                    for q in 0..2 {
                        let a = raw[(3 * x + q + 7) % raw.len()];
                        d.set_alpha(x, q, [a, 1.0 - a]);
                    }
                }
            }
            let tr = BlockTraffic { loads_pkts: vec![vec![50.0, 120.0]; t.num_nodes()], packet_bits: vec![2000.0, 800.0] };
            let rates = link_rates(&t, &curves, &d);
            let m = block_metrics(&t, &d, &tr, &rates, &[1.0, 1.0]).unwrap();
            for q in 0..2 {
                let brute = m.path_latency_s[q].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                prop_assert!((m.worst_latency_s[q] - brute).abs() <= 1e-15 * brute);
                let dfs = dfs_max(&t, &d, &tr, &rates, q);
                prop_assert!((m.worst_latency_s[q] - dfs).abs() <= 1e-12 * dfs);
            }
        }

        #[test]
        fn hop_latency_is_homogeneous_in_split(
            a in 0.0f64..=1.0, c in 0.0f64..=1.0, load in 0.0f64..500.0, rate in 1e3f64..1e9,
        ) {
            let base = hop_latency(a, load, 0.0, 800.0, rate).unwrap();
            let scaled = hop_latency(c * a, load, 0.0, 800.0, rate).unwrap();
            prop_assert!((scaled - c * base).abs() <= 1e-12 * base.max(1e-300));
        }

        #[test]
        fn average_of_maxima_dominates_maximum_of_averages(
            xs in proptest::collection::vec(proptest::collection::vec(0.0f64..1.0, 4), 1..30),
        ) {
            let n = xs.len() as f64;
            let avg_of_max = xs.iter().map(|r| r.iter().cloned().fold(0.0, f64::max)).sum::<f64>() / n;
            let max_of_avg = (0..4).map(|b| xs.iter().map(|r| r[b]).sum::<f64>() / n).fold(0.0, f64::max);
            prop_assert!(avg_of_max >= max_of_avg - 1e-12);
        }
    }
}
