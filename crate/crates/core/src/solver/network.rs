//! Optimal split ratios for fixed link powers.
//!
//! With powers fixed, each service's worst-path latency is minimized node by
//! node from the last layer back to the source. At a node with traffic `c`
//! bits, child values `v₀, v₁` and hop times `a_k = c / D_k`, sending a share
//! `α` over link 0 yields `max(α·a₀ + v₀, (1 − α)·a₁ + v₁)`. The interior
//! optimum equalizes both branches at
//!
//! ```text
//! α* = (a₁ + v₁ − v₀) / (a₀ + a₁),   value = (c + v₀·D₀ + v₁·D₁) / (D₀ + D₁)
//! ```
//!
//! When `α*` falls outside `(0, 1)` the node routes everything over one link.
//! Under [`Routing::Split`](crate::perf::Routing) an unused branch stops
//! counting; under fixed routing it still counts with zero hop time. Child
//! values do not depend on the parent's ratios, so the recursion is exact.

use crate::channel::RateCurve;
use crate::perf::BlockTraffic;
use crate::topology::{PathId, Topology};

/// Local derivative record of one node value.
#[derive(Debug, Clone, Copy, Default)]
struct NodeRecord {
    value: f64,
    alpha: [f64; 2],
    /// ∂value/∂D_k.
    d_rate: [f64; 2],
    /// ∂value/∂v_k (child values).
    d_child: [f64; 2],
}

/// Result of evaluating a network at fixed powers.
#[derive(Debug, Clone)]
pub(crate) struct Evaluation {
    /// Worst routed-path latency per service.
    pub values: Vec<f64>,
    /// `alpha[node * services + q]`.
    pub alpha: Vec<[f64; 2]>,
    /// `grad[q][link]`: ∂value_q / ∂P_link.
    pub grad: Vec<Vec<f64>>,
}

/// A topology restricted to a set of links, with per-node traffic in bits.
#[derive(Debug, Clone)]
pub(crate) struct Network<'a> {
    pub topo: &'a Topology,
    pub curves: &'a [RateCurve],
    pub services: usize,
    /// `bits[node * services + q]`.
    bits: Vec<f64>,
    /// Links a node may use.
    pub allowed: Vec<[bool; 2]>,
    /// Nodes reachable from the source over allowed links.
    pub reachable: Vec<bool>,
    /// Whether unused branches stop counting.
    pub prune: bool,
}

impl<'a> Network<'a> {
    /// The full network under split routing.
    pub fn full(topo: &'a Topology, curves: &'a [RateCurve], traffic: &BlockTraffic) -> Self {
        let allowed = (0..topo.num_nodes()).map(|x| [true, topo.out_degree(x) == 2]).collect();
        Self::with_allowed(topo, curves, traffic, allowed, true)
    }

    /// Only the links of `paths`; every path of the induced subgraph counts.
    pub fn restricted(topo: &'a Topology, curves: &'a [RateCurve], traffic: &BlockTraffic, paths: &[usize]) -> Self {
        let mut allowed = vec![[false, false]; topo.num_nodes()];
        for &b in paths {
            for (x, k) in topo.path_hops(PathId { index: b }) {
                allowed[x][k] = true;
            }
        }
        Self::with_allowed(topo, curves, traffic, allowed, false)
    }

    fn with_allowed(
        topo: &'a Topology,
        curves: &'a [RateCurve],
        traffic: &BlockTraffic,
        allowed: Vec<[bool; 2]>,
        prune: bool,
    ) -> Self {
        let services = traffic.num_services();
        let nodes = topo.num_nodes();
        let mut bits = Vec::with_capacity(nodes * services);
        for x in 0..nodes {
            for q in 0..services {
                bits.push(traffic.bits(x, q));
            }
        }
        let mut reachable = vec![false; nodes];
        reachable[0] = true;
        for x in 0..nodes {
            if !reachable[x] {
                continue;
            }
            for k in 0..topo.out_degree(x) {
                if allowed[x][k] {
                    if let Some(c) = topo.child(x, k) {
                        reachable[c] = true;
                    }
                }
            }
        }
        Network { topo, curves, services, bits, allowed, reachable, prune }
    }

    pub fn bits(&self, node: usize, q: usize) -> f64 {
        self.bits[node * self.services + q]
    }

    /// Whether a node has a free power split (two usable links).
    pub fn is_split_node(&self, node: usize) -> bool {
        self.reachable[node] && self.allowed[node][0] && self.allowed[node][1]
    }

    /// Paths of the induced subgraph (every hop allowed).
    pub fn paths(&self) -> Vec<usize> {
        (0..self.topo.num_paths())
            .filter(|&b| self.topo.path_hops(PathId { index: b }).into_iter().all(|(x, k)| self.allowed[x][k]))
            .collect()
    }

    /// Optimal ratios and worst-path latencies at per-link powers `power`.
    /// Gradients are filled when `with_grad` is set.
    pub fn evaluate(&self, power: &[f64], with_grad: bool) -> Evaluation {
        let topo = self.topo;
        let nodes = topo.num_nodes();
        let rates: Vec<f64> = power.iter().zip(self.curves).map(|(&p, c)| c.rate(p)).collect();
        let mut values = vec![0.0; self.services];
        let mut alpha = vec![[0.5, 0.5]; nodes * self.services];
        for x in 0..nodes {
            if topo.out_degree(x) == 1 {
                for q in 0..self.services {
                    alpha[x * self.services + q] = [1.0, 0.0];
                }
            }
        }
        let mut grad = if with_grad { vec![vec![0.0; power.len()]; self.services] } else { Vec::new() };
        let mut rec = vec![NodeRecord::default(); nodes];
        let mut adj = vec![0.0; nodes];
        for q in 0..self.services {
            for x in (0..nodes).rev() {
                if !self.reachable[x] {
                    continue;
                }
                rec[x] = self.node(x, q, &rates, &rec);
                alpha[x * self.services + q] = rec[x].alpha;
            }
            values[q] = rec[0].value;
            if with_grad {
                adj.iter_mut().for_each(|a| *a = 0.0);
                adj[0] = 1.0;
                let g = &mut grad[q];
                for x in 0..nodes {
                    let w = adj[x];
                    if w == 0.0 || !self.reachable[x] {
                        continue;
                    }
                    for k in 0..topo.out_degree(x) {
                        let link = topo.link_index(x, k);
                        if rec[x].d_rate[k] != 0.0 {
                            g[link] += w * rec[x].d_rate[k] * self.curves[link].rate_slope(power[link]);
                        }
                        if let Some(c) = topo.child(x, k) {
                            adj[c] += w * rec[x].d_child[k];
                        }
                    }
                }
            }
        }
        Evaluation { values, alpha, grad }
    }

    fn node(&self, x: usize, q: usize, rates: &[f64], rec: &[NodeRecord]) -> NodeRecord {
        let topo = self.topo;
        let c = self.bits(x, q);
        let child_value = |k: usize| topo.child(x, k).map_or(0.0, |ch| rec[ch].value);
        let link = |k: usize| topo.link_index(x, k);
        let single = |k: usize| {
            let d = rates[link(k)];
            let mut r = NodeRecord { value: child_value(k), ..Default::default() };
            r.alpha[k] = 1.0;
            r.d_child[k] = 1.0;
            if c > 0.0 {
                if d > 0.0 {
                    r.value += c / d;
                    r.d_rate[k] = -c / (d * d);
                } else {
                    r.value = f64::INFINITY;
                }
            }
            r
        };
        let both = topo.out_degree(x) == 2 && self.allowed[x][0] && self.allowed[x][1];
        if !both {
            let k = if self.allowed[x][0] || topo.out_degree(x) == 1 { 0 } else { 1 };
            return single(k);
        }
        let (v0, v1) = (child_value(0), child_value(1));
        // Branch k taken alone while the other branch still counts (fixed routing).
        let pure_counting = |k: usize| {
            let mut r = single(k);
            let other = 1 - k;
            let vo = child_value(other);
            if vo > r.value {
                r = NodeRecord { value: vo, ..Default::default() };
                r.alpha[k] = 1.0;
                r.d_child[other] = 1.0;
            }
            r
        };
        if c == 0.0 {
            let mut r = NodeRecord::default();
            if self.prune {
                match v0.total_cmp(&v1) {
                    std::cmp::Ordering::Less => return single(0),
                    std::cmp::Ordering::Greater => return single(1),
                    std::cmp::Ordering::Equal => {
                        r.value = v0;
                        r.d_child = [0.5, 0.5];
                    }
                }
            } else {
                r.value = v0.max(v1);
                r.d_child = if v0 >= v1 { [1.0, 0.0] } else { [0.0, 1.0] };
            }
            r.alpha = [0.5, 0.5];
            return r;
        }
        let (d0, d1) = (rates[link(0)], rates[link(1)]);
        if d0 <= 0.0 && d1 <= 0.0 {
            return NodeRecord { value: f64::INFINITY, alpha: [0.5, 0.5], ..Default::default() };
        }
        let pure = |k: usize| if self.prune { single(k) } else { pure_counting(k) };
        if d1 <= 0.0 {
            return pure(0);
        }
        if d0 <= 0.0 {
            return pure(1);
        }
        let (a0, a1) = (c / d0, c / d1);
        // Each share from its own numerator: `1 − α` loses all precision when
        // one link is nearly unpowered and its hop time is huge.
        let share0 = (a1 + v1 - v0) / (a0 + a1);
        let share1 = (a0 + v0 - v1) / (a0 + a1);
        if share1 <= 0.0 {
            return pure(0);
        }
        if share0 <= 0.0 {
            return pure(1);
        }
        let alpha = if share0 <= share1 { [share0, 1.0 - share0] } else { [1.0 - share1, share1] };
        let s = d0 + d1;
        let value = (c + v0 * d0 + v1 * d1) / s;
        NodeRecord {
            value,
            alpha,
            d_rate: [(v0 - value) / s, (v1 - value) / s],
            d_child: [d0 / s, d1 / s],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perf::{block_metrics, link_rates, Decision, Routing};
    use crate::topology::{build_topology, LinkDistances};
    use proptest::prelude::*;

    fn setup(h: usize, losses: &[f64], loads: &[f64]) -> (Topology, Vec<RateCurve>, BlockTraffic) {
        let t = build_topology(h, &LinkDistances::default()).unwrap();
        let curves = (0..t.num_links()).map(|i| RateCurve::new(50e6, losses[i % losses.len()], -174.0).unwrap()).collect();
        let traffic = BlockTraffic {
            loads_pkts: (0..t.num_nodes()).map(|x| vec![loads[x % loads.len()], loads[(x + 1) % loads.len()]]).collect(),
            packet_bits: vec![2000.0, 800.0],
        };
        (t, curves, traffic)
    }

    fn decision_from(net: &Network, ev: &Evaluation, power: &[f64], routing: Routing) -> Decision {
        let t = net.topo;
        let mut d = Decision::uniform(t, net.services, 0.2, 0);
        d.routing = routing;
        for x in 0..t.num_nodes() {
            for q in 0..net.services {
                d.set_alpha(x, q, ev.alpha[x * net.services + q]);
            }
            let p0 = power[t.link_index(x, 0)];
            let p1 = if t.out_degree(x) == 2 { power[t.link_index(x, 1)] } else { 0.0 };
            d.set_power(x, [p0, p1]);
        }
        d
    }

    /// Worst routed latency by direct path enumeration.
    fn direct(net: &Network, ev: &Evaluation, power: &[f64], routing: Routing) -> Vec<f64> {
        let d = decision_from(net, ev, power, routing);
        let traffic = BlockTraffic {
            loads_pkts: (0..net.topo.num_nodes()).map(|x| (0..net.services).map(|q| net.bits(x, q)).collect()).collect(),
            packet_bits: vec![1.0; net.services],
        };
        let rates = link_rates(net.topo, net.curves, &d);
        block_metrics(net.topo, &d, &traffic, &rates, &vec![1.0; net.services]).unwrap().worst_latency_s
    }

    proptest! {
        #[test]
        fn recursion_matches_path_enumeration(
            h in 1usize..=4,
            losses in proptest::collection::vec(85.0f64..115.0, 8),
            loads in proptest::collection::vec(0.0f64..200.0, 5),
            split in proptest::collection::vec(0.0f64..=1.0, 9),
        ) {
            let (t, curves, traffic) = setup(h, &losses, &loads);
            let mut power = vec![0.0; t.num_links()];
            for x in 0..t.num_nodes() {
                if t.out_degree(x) == 2 {
                    let s = split[x % split.len()];
                    power[t.link_index(x, 0)] = 0.2 * s;
                    power[t.link_index(x, 1)] = 0.2 * (1.0 - s);
                } else {
                    power[t.link_index(x, 0)] = 0.2;
                }
            }
            let net = Network::full(&t, &curves, &traffic);
            let ev = net.evaluate(&power, false);
            let brute = direct(&net, &ev, &power, Routing::Split);
            for q in 0..2 {
                if ev.values[q].is_finite() {
                    prop_assert!((ev.values[q] - brute[q]).abs() <= 1e-9 * ev.values[q].max(1e-12));
                }
            }
            let paths = vec![0, t.num_paths() - 1];
            let net = Network::restricted(&t, &curves, &traffic, &paths);
            let ev = net.evaluate(&power, false);
            let brute = direct(&net, &ev, &power, Routing::Fixed(net.paths()));
            for q in 0..2 {
                if ev.values[q].is_finite() {
                    prop_assert!((ev.values[q] - brute[q]).abs() <= 1e-9 * ev.values[q].max(1e-12));
                }
            }
        }

        #[test]
        fn gradient_matches_finite_differences(
            h in 1usize..=3,
            losses in proptest::collection::vec(90.0f64..110.0, 8),
            power in proptest::collection::vec(0.02f64..0.2, 12),
        ) {
            let (t, curves, traffic) = setup(h, &losses, &[100.0, 60.0, 30.0]);
            let power = &power[..t.num_links()];
            let net = Network::full(&t, &curves, &traffic);
            let ev = net.evaluate(power, true);
            for link in 0..t.num_links() {
                let step = 1e-7 * power[link];
                let mut up = power.to_vec();
                up[link] += step;
                let mut dn = power.to_vec();
                dn[link] -= step;
                let (fu, fd) = (net.evaluate(&up, false), net.evaluate(&dn, false));
                for q in 0..2 {
                    let fdq = (fu.values[q] - fd.values[q]) / (2.0 * step);
                    let scale = ev.values[q] / power[link];
                    // Skip points sitting on a branch switch.
                    let one_sided = (fu.values[q] - ev.values[q]) / step;
                    if ((one_sided - fdq) / scale).abs() < 1e-4 {
                        prop_assert!(((ev.grad[q][link] - fdq) / scale).abs() < 1e-4,
                            "q={} link={} grad={} fd={}", q, link, ev.grad[q][link], fdq);
                    }
                }
            }
        }
    }

    #[test]
    fn symmetric_node_splits_evenly() {
        let (t, curves, traffic) = setup(1, &[100.0], &[100.0]);
        let net = Network::full(&t, &curves, &traffic);
        let ev = net.evaluate(&[0.1, 0.1, 0.2, 0.2], false);
        assert!((ev.alpha[0][0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn nearly_unpowered_link_keeps_ratios_consistent() {
        let (t, curves, traffic) = setup(1, &[100.0], &[100.0]);
        let power = [0.2, 1e-16, 0.2, 0.2];
        let net = Network::restricted(&t, &curves, &traffic, &[0, 1]);
        let ev = net.evaluate(&power, false);
        let brute = direct(&net, &ev, &power, Routing::Fixed(net.paths()));
        assert!((ev.values[0] - brute[0]).abs() <= 1e-9 * ev.values[0], "{} vs {}", ev.values[0], brute[0]);
    }

    #[test]
    fn dead_branch_is_avoided() {
        let (t, curves, traffic) = setup(1, &[100.0], &[100.0]);
        let net = Network::full(&t, &curves, &traffic);
        let ev = net.evaluate(&[0.2, 0.0, 0.2, 0.2], false);
        assert_eq!(ev.alpha[0], [1.0, 0.0]);
        assert!(ev.values[0].is_finite());
    }
}
