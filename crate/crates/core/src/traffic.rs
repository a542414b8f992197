//! Per-block traffic: Poisson arrivals, queue backlogs and flow propagation.
//!
//! Counts are kept per transmitter (source and relays) and per service. In
//! the default per-node mode every transmitter draws its own arrivals and
//! backlog; in flow mode the relays instead receive what their parents
//! forward under the block's split decision.

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::perf::Decision;
use crate::topology::Topology;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrafficError {
    #[error("Poisson mean must be nonnegative and finite, got {0}")]
    Mean(f64),
    #[error("service {service}: {reason}")]
    Service { service: usize, reason: String },
    #[error("served count for node {node} service {service} exceeds backlog plus arrivals ({served} > {available})")]
    OverService { node: usize, service: usize, served: u64, available: u64 },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("split ratios of node {node} service {service} do not sum to one (sum {sum})")]
    Simplex { node: usize, service: usize, sum: f64 },
}

/// One traffic class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceSpec {
    pub packet_size_bits: f64,
    pub arrival_rate_pps: f64,
    /// Mean backlog found at a transmitter at block start, packets.
    pub backlog_mean_pkts: f64,
    pub latency_budget_s: f64,
}

impl ServiceSpec {
    pub fn from_bytes(packet_size_bytes: f64, arrival_rate_pps: f64, backlog_mean_pkts: f64, latency_budget_s: f64) -> Self {
        ServiceSpec { packet_size_bits: 8.0 * packet_size_bytes, arrival_rate_pps, backlog_mean_pkts, latency_budget_s }
    }

    pub fn validate(&self, service: usize) -> Result<(), TrafficError> {
        let fail = |reason: &str| Err(TrafficError::Service { service, reason: reason.to_string() });
        if !(self.packet_size_bits > 0.0 && self.packet_size_bits.is_finite()) {
            return fail("packet size must be positive");
        }
        if !(self.arrival_rate_pps >= 0.0 && self.arrival_rate_pps.is_finite()) {
            return fail("arrival rate must be nonnegative");
        }
        if !(self.backlog_mean_pkts >= 0.0 && self.backlog_mean_pkts.is_finite()) {
            return fail("backlog mean must be nonnegative");
        }
        if !(self.latency_budget_s > 0.0 && self.latency_budget_s.is_finite()) {
            return fail("latency budget must be positive");
        }
        Ok(())
    }

    /// Mean arrivals per block.
    pub fn arrivals_per_block(&self, block_s: f64) -> f64 {
        self.arrival_rate_pps * block_s
    }
}

/// Default services: 250-byte packets at 200 pkt/s and 100-byte packets at
/// 500 pkt/s, both with a 30 ms budget.
pub fn default_services() -> Vec<ServiceSpec> {
    vec![
        ServiceSpec::from_bytes(250.0, 200.0, DEFAULT_BACKLOG_BLOCKS * 200.0 * 0.5, 0.03),
        ServiceSpec::from_bytes(100.0, 500.0, DEFAULT_BACKLOG_BLOCKS * 500.0 * 0.5, 0.03),
    ]
}

/// Default backlog mean, in units of one block's mean arrivals.
pub const DEFAULT_BACKLOG_BLOCKS: f64 = 5.6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TrafficMode {
    /// Every transmitter draws its own arrivals and backlog.
    #[default]
    PerNode,
    /// Relays receive the traffic forwarded by their parents.
    FlowPropagated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum QueueMode {
    /// Backlog is drawn afresh every block.
    #[default]
    Trace,
    /// Backlog carries over: `backlog + arrivals − served`.
    ClosedLoop,
}

/// Integer arrivals and backlog per transmitter and service for one block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficState {
    pub block: usize,
    /// `arrivals[node][q]`.
    pub arrivals: Vec<Vec<u64>>,
    /// `backlog[node][q]`.
    pub backlog: Vec<Vec<u64>>,
}

impl TrafficState {
    pub fn zeros(block: usize, nodes: usize, services: usize) -> Self {
        TrafficState { block, arrivals: vec![vec![0; services]; nodes], backlog: vec![vec![0; services]; nodes] }
    }

    pub fn num_nodes(&self) -> usize {
        self.arrivals.len()
    }

    pub fn num_services(&self) -> usize {
        self.arrivals.first().map_or(0, Vec::len)
    }

    /// `λ + n` per node and service, as packets.
    pub fn loads(&self) -> Vec<Vec<f64>> {
        self.arrivals
            .iter()
            .zip(&self.backlog)
            .map(|(a, n)| a.iter().zip(n).map(|(a, n)| (a + n) as f64).collect())
            .collect()
    }
}

pub fn sample_arrivals<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> Result<u64, TrafficError> {
    if !(mean >= 0.0 && mean.is_finite()) {
        return Err(TrafficError::Mean(mean));
    }
    if mean == 0.0 {
        return Ok(0);
    }
    let p = Poisson::new(mean).map_err(|_| TrafficError::Mean(mean))?;
    Ok(p.sample(rng) as u64)
}

/// Draws arrivals for every node, and backlog too when `draw_backlog` is set.
/// In flow mode only the source draws; relays start empty.
pub fn draw_traffic<R: Rng + ?Sized>(
    topo: &Topology,
    services: &[ServiceSpec],
    block_s: f64,
    block: usize,
    mode: TrafficMode,
    draw_backlog: bool,
    rng: &mut R,
) -> Result<TrafficState, TrafficError> {
    let mut state = TrafficState::zeros(block, topo.num_nodes(), services.len());
    let drawing_nodes = match mode {
        TrafficMode::PerNode => topo.num_nodes(),
        TrafficMode::FlowPropagated => 1,
    };
    for node in 0..drawing_nodes {
        for (q, s) in services.iter().enumerate() {
            state.arrivals[node][q] = sample_arrivals(s.arrivals_per_block(block_s), rng)?;
            if draw_backlog {
                state.backlog[node][q] = sample_arrivals(s.backlog_mean_pkts, rng)?;
            }
        }
    }
    Ok(state)
}

/// Next block's state: `backlog + arrivals − served` with fresh arrivals.
pub fn advance_queues(
    state: &TrafficState,
    served: &[Vec<u64>],
    new_arrivals: &[Vec<u64>],
) -> Result<TrafficState, TrafficError> {
    if served.len() != state.num_nodes() || new_arrivals.len() != state.num_nodes() {
        return Err(TrafficError::Shape("served/new arrivals must have one row per node".into()));
    }
    let mut backlog = state.backlog.clone();
    for (node, row) in backlog.iter_mut().enumerate() {
        if served[node].len() != row.len() || new_arrivals[node].len() != row.len() {
            return Err(TrafficError::Shape(format!("node {node} has the wrong number of services")));
        }
        for (q, b) in row.iter_mut().enumerate() {
            let available = *b + state.arrivals[node][q];
            let s = served[node][q];
            if s > available {
                return Err(TrafficError::OverService { node, service: q, served: s, available });
            }
            *b = available - s;
        }
    }
    Ok(TrafficState { block: state.block + 1, arrivals: new_arrivals.to_vec(), backlog })
}

/// Traffic entering layer `layer + 1` given what each transmitter of `layer`
/// sends out (`upstream[j][q]`). Returns one row per receiving relay.
pub fn propagate_layer(
    topo: &Topology,
    decision: &Decision,
    layer: usize,
    upstream: &[Vec<f64>],
) -> Result<Vec<Vec<f64>>, TrafficError> {
    if layer >= topo.relay_layers() {
        return Err(TrafficError::Shape(format!("layer {layer} has no downstream relay layer")));
    }
    let width = if layer == 0 { 1 } else { topo.relays_per_layer() };
    if upstream.len() != width {
        return Err(TrafficError::Shape(format!("layer {layer} has {width} transmitters, got {}", upstream.len())));
    }
    let services = decision.num_services();
    let mut out = vec![vec![0.0; services]; topo.relays_per_layer()];
    for (j, loads) in upstream.iter().enumerate() {
        let node = topo.node_index(layer, j);
        for q in 0..services {
            let a = decision.alpha(node, q);
            let sum = a[0] + a[1];
            if (sum - 1.0).abs() > 1e-9 || a.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
                return Err(TrafficError::Simplex { node, service: q, sum });
            }
            for (k, row) in out.iter_mut().enumerate() {
                row[q] += a[k] * loads[q];
            }
        }
    }
    Ok(out)
}

/// Propagates the source's traffic through every layer. `own[node][q]` is
/// traffic originating at each node (source load, plus any relay backlog);
/// the result is the total each node transmits.
pub fn propagate_traffic(topo: &Topology, decision: &Decision, own: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, TrafficError> {
    if own.len() != topo.num_nodes() {
        return Err(TrafficError::Shape("one row per node required".into()));
    }
    let mut total = own.to_vec();
    for layer in 0..topo.relay_layers() {
        let width = if layer == 0 { 1 } else { topo.relays_per_layer() };
        let upstream: Vec<Vec<f64>> = (0..width).map(|j| total[topo.node_index(layer, j)].clone()).collect();
        let down = propagate_layer(topo, decision, layer, &upstream)?;
        for (k, row) in down.into_iter().enumerate() {
            let node = topo.node_index(layer + 1, k);
            for (t, v) in total[node].iter_mut().zip(row) {
                *t += v;
            }
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{build_topology, LinkDistances};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn poisson_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        assert!((0..100).all(|_| sample_arrivals(0.0, &mut rng).unwrap() == 0));
        let n = 100_000;
        let xs: Vec<f64> = (0..n).map(|_| sample_arrivals(20.0, &mut rng).unwrap() as f64).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((19.8..=20.2).contains(&mean), "mean {mean}");
        assert!((19.0..=21.0).contains(&var), "var {var}");
        assert!(sample_arrivals(-1.0, &mut rng).is_err());

        let mut a = ChaCha8Rng::seed_from_u64(5);
        let mut b = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            assert_eq!(sample_arrivals(7.5, &mut a).unwrap(), sample_arrivals(7.5, &mut b).unwrap());
        }
    }

    fn one_node(backlog: u64, arrivals: u64) -> TrafficState {
        TrafficState { block: 0, arrivals: vec![vec![arrivals]], backlog: vec![vec![backlog]] }
    }

    #[test]
    fn queue_update() {
        let s = advance_queues(&one_node(5, 3), &[vec![8]], &[vec![4]]).unwrap();
        assert_eq!(s.backlog, vec![vec![0]]);
        assert_eq!(s.arrivals, vec![vec![4]]);
        assert_eq!(s.block, 1);
        let s = advance_queues(&one_node(5, 3), &[vec![0]], &[vec![0]]).unwrap();
        assert_eq!(s.backlog, vec![vec![8]]);
        assert!(matches!(
            advance_queues(&one_node(2, 0), &[vec![3]], &[vec![0]]),
            Err(TrafficError::OverService { .. })
        ));
    }

    fn decision_with_alpha(topo: &Topology, alpha: [f64; 2]) -> Decision {
        let mut d = Decision::uniform(topo, 1, 0.0, 0);
        for x in 0..topo.num_nodes() {
            if topo.out_degree(x) == 2 {
                d.set_alpha(x, 0, alpha);
            }
        }
        d
    }

    #[test]
    fn propagation_examples() {
        let t = build_topology(2, &LinkDistances::default()).unwrap();
        let half = decision_with_alpha(&t, [0.5, 0.5]);
        let down = propagate_layer(&t, &half, 1, &[vec![10.0], vec![10.0]]).unwrap();
        assert_eq!(down, vec![vec![10.0], vec![10.0]]);
        let left = decision_with_alpha(&t, [1.0, 0.0]);
        let down = propagate_layer(&t, &left, 1, &[vec![10.0], vec![10.0]]).unwrap();
        assert_eq!(down, vec![vec![20.0], vec![0.0]]);
        let skew = decision_with_alpha(&t, [0.3, 0.7]);
        let down = propagate_layer(&t, &skew, 0, &[vec![100.0]]).unwrap();
        assert!((down[0][0] - 30.0).abs() < 1e-12 && (down[1][0] - 70.0).abs() < 1e-12);

        let mut bad = half.clone();
        bad.set_alpha(0, 0, [0.5, 0.6]);
        assert!(matches!(propagate_layer(&t, &bad, 0, &[vec![1.0]]), Err(TrafficError::Simplex { .. })));
    }

    #[test]
    fn flow_mode_draws_only_at_source() {
        let t = build_topology(2, &LinkDistances::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = draw_traffic(&t, &default_services(), 0.5, 0, TrafficMode::FlowPropagated, false, &mut rng).unwrap();
        assert!(s.arrivals[0].iter().all(|&a| a > 0));
        assert!(s.arrivals[1..].iter().flatten().all(|&a| a == 0));
        assert!(s.backlog.iter().flatten().all(|&b| b == 0));
    }

    proptest! {
        #[test]
        fn flow_is_conserved_layer_to_layer(
            h in 1usize..=5,
            splits in proptest::collection::vec(0.0f64..=1.0, 64),
            source in 0.0f64..1000.0,
        ) {
            let t = build_topology(h, &LinkDistances::default()).unwrap();
            let mut d = Decision::uniform(&t, 2, 0.0, 0);
            for x in 0..t.num_nodes() {
                if t.out_degree(x) == 2 {
                    for q in 0..2 {
                        let a = splits[(2 * x + q) % splits.len()];
                        d.set_alpha(x, q, [a, 1.0 - a]);
                    }
                }
            }
            let mut own = vec![vec![0.0; 2]; t.num_nodes()];
            own[0] = vec![source, 0.5 * source];
            let total = propagate_traffic(&t, &d, &own).unwrap();
            for layer in 1..=h {
                for q in 0..2 {
                    let sum: f64 = (0..2).map(|j| total[t.node_index(layer, j)][q]).sum();
                    prop_assert!((sum - own[0][q]).abs() <= 1e-9 * (1.0 + own[0][q]));
                }
            }
        }

        #[test]
        fn queues_stay_empty_when_fully_served(arrivals in proptest::collection::vec(0u64..50, 1..20)) {
            let mut s = one_node(0, 0);
            for a in arrivals {
                let served = vec![vec![s.backlog[0][0] + s.arrivals[0][0]]];
                s = advance_queues(&s, &served, &[vec![a]]).unwrap();
                prop_assert_eq!(s.backlog[0][0], 0);
            }
        }
    }
}
