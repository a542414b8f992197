//! Shared machinery: power parametrizations, seeding, multi-start descent,
//! barrier continuation and decision assembly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::lbfgs::{minimize, LbfgsOptions, Minimum};
use super::network::{Evaluation, Network};
use super::{PathSet, ProblemInstance, SolverOptions};
use crate::perf::{Decision, PowerRule, Routing};
use crate::topology::PathId;

pub(crate) fn build_network<'a>(inst: &'a ProblemInstance, paths: &PathSet) -> Network<'a> {
    match paths {
        PathSet::All => Network::full(&inst.topology, &inst.curves, &inst.traffic),
        PathSet::Only(p) => Network::restricted(&inst.topology, &inst.curves, &inst.traffic, p),
    }
}

pub(crate) fn routing_for(net: &Network, paths: &PathSet) -> Routing {
    match paths {
        PathSet::All => Routing::Split,
        PathSet::Only(_) => Routing::Fixed(net.paths()),
    }
}

/// Which nodes carry power variables.
#[derive(Debug, Clone)]
pub(crate) struct Layout {
    /// Reachable nodes with two usable links.
    pub split: Vec<usize>,
    /// Every reachable node.
    pub active: Vec<usize>,
    /// Usable link of reachable single-link nodes.
    pub only_link: Vec<Option<usize>>,
}

impl Layout {
    pub fn new(net: &Network) -> Layout {
        let nodes = net.topo.num_nodes();
        let split: Vec<usize> = (0..nodes).filter(|&x| net.is_split_node(x)).collect();
        let active: Vec<usize> = (0..nodes).filter(|&x| net.reachable[x]).collect();
        let only_link = (0..nodes)
            .map(|x| {
                if !net.reachable[x] || net.is_split_node(x) {
                    None
                } else if net.allowed[x][0] || net.topo.out_degree(x) == 1 {
                    Some(0)
                } else {
                    Some(1)
                }
            })
            .collect();
        Layout { split, active, only_link }
    }

    /// Link powers when every reachable node spends `cap`, split nodes by `s`.
    pub fn full_powers(&self, net: &Network, cap: f64, s: &[f64]) -> Vec<f64> {
        let topo = net.topo;
        let mut p = vec![0.0; topo.num_links()];
        for (i, &x) in self.split.iter().enumerate() {
            p[topo.link_index(x, 0)] = cap * s[i];
            p[topo.link_index(x, 1)] = cap * (1.0 - s[i]);
        }
        for &x in &self.active {
            if let Some(k) = self.only_link[x] {
                p[topo.link_index(x, k)] = cap;
            }
        }
        p
    }

    /// Chain rule from per-link gradient to split variables at full power.
    pub fn full_grad(&self, net: &Network, cap: f64, link_grad: &[f64], out: &mut [f64]) {
        for (i, &x) in self.split.iter().enumerate() {
            out[i] = cap * (link_grad[net.topo.link_index(x, 0)] - link_grad[net.topo.link_index(x, 1)]);
        }
    }

    /// Number of `(T, s)` variables: one total per active node, one split per split node.
    pub fn capped_dim(&self) -> usize {
        self.active.len() + self.split.len()
    }

    /// Link powers from node totals `x[..active]` and splits `x[active..]`.
    pub fn capped_powers(&self, net: &Network, x: &[f64]) -> Vec<f64> {
        let topo = net.topo;
        let mut p = vec![0.0; topo.num_links()];
        let (totals, splits) = x.split_at(self.active.len());
        let mut si = 0;
        for (i, &node) in self.active.iter().enumerate() {
            match self.only_link[node] {
                Some(k) => p[topo.link_index(node, k)] = totals[i],
                None => {
                    p[topo.link_index(node, 0)] = totals[i] * splits[si];
                    p[topo.link_index(node, 1)] = totals[i] * (1.0 - splits[si]);
                    si += 1;
                }
            }
        }
        p
    }

    pub fn capped_grad(&self, net: &Network, x: &[f64], link_grad: &[f64], out: &mut [f64]) {
        let topo = net.topo;
        let na = self.active.len();
        let mut si = 0;
        for (i, &node) in self.active.iter().enumerate() {
            match self.only_link[node] {
                Some(k) => out[i] = link_grad[topo.link_index(node, k)],
                None => {
                    let (g0, g1) = (link_grad[topo.link_index(node, 0)], link_grad[topo.link_index(node, 1)]);
                    let s = x[na + si];
                    out[i] = s * g0 + (1.0 - s) * g1;
                    out[na + si] = x[i] * (g0 - g1);
                    si += 1;
                }
            }
        }
    }

    /// `(T, s)` point from full-power splits.
    pub fn capped_from_full(&self, cap: f64, s: &[f64]) -> Vec<f64> {
        let mut x = vec![cap; self.active.len()];
        x.extend_from_slice(s);
        x
    }

    pub fn capped_bounds(&self, cap: f64) -> (Vec<f64>, Vec<f64>) {
        let n = self.capped_dim();
        let mut hi = vec![1.0; n];
        hi[..self.active.len()].iter_mut().for_each(|v| *v = cap);
        (vec![0.0; n], hi)
    }

    /// Split variables that send all power along path `b`; other split nodes stay even.
    pub fn path_splits(&self, net: &Network, b: usize) -> Vec<f64> {
        let hops = net.topo.path_hops(PathId { index: b });
        self.split
            .iter()
            .map(|&x| match hops.iter().find(|(n, _)| *n == x) {
                Some((_, 0)) => 1.0,
                Some(_) => 0.0,
                None => 0.5,
            })
            .collect()
    }
}

impl Layout {
    /// Capped-form point powering only paths `a` and `b` at the cap, with
    /// even power where they diverge and every other node silent.
    pub fn pair_seed(&self, net: &Network, cap: f64, a: usize, b: usize) -> Vec<f64> {
        let topo = net.topo;
        let (ha, hb) = (topo.path_hops(PathId { index: a }), topo.path_hops(PathId { index: b }));
        let hop = |hops: &[(usize, usize)], x: usize| hops.iter().find(|(n, _)| *n == x).map(|&(_, k)| k);
        let mut x: Vec<f64> =
            self.active.iter().map(|&n| if hop(&ha, n).is_some() || hop(&hb, n).is_some() { cap } else { 0.0 }).collect();
        x.extend(self.split.iter().map(|&n| match (hop(&ha, n), hop(&hb, n)) {
            (Some(ka), Some(kb)) if ka != kb => 0.5,
            (Some(k), _) | (None, Some(k)) => {
                if k == 0 {
                    1.0
                } else {
                    0.0
                }
            }
            (None, None) => 0.5,
        }));
        x
    }
}

/// Paths of the network ordered by their full-power latency summed over
/// services (ties by index).
pub(crate) fn ranked_paths(net: &Network, cap: f64) -> Vec<usize> {
    let topo = net.topo;
    let mut scored: Vec<(f64, usize)> = net
        .paths()
        .into_iter()
        .map(|b| {
            let cost: f64 = topo
                .path_hops(PathId { index: b })
                .into_iter()
                .map(|(x, k)| {
                    let d = net.curves[topo.link_index(x, k)].rate(cap);
                    (0..net.services).map(|q| net.bits(x, q) / d).sum::<f64>()
                })
                .sum();
            (cost, b)
        })
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    scored.into_iter().map(|(_, b)| b).collect()
}

/// Candidate split vectors: even split, best single paths, a coarse grid on
/// small problems and a few random points.
pub(crate) fn split_seeds(net: &Network, layout: &Layout, cap: f64, opts: &SolverOptions) -> Vec<Vec<f64>> {
    let m = layout.split.len();
    let mut seeds = vec![vec![0.5; m]];
    if m == 0 {
        return seeds;
    }
    for b in ranked_paths(net, cap).into_iter().take(8) {
        seeds.push(layout.path_splits(net, b));
    }
    let levels = opts.grid_levels.max(1);
    if (levels as f64).powi(m as i32) <= 1000.0 {
        let total = levels.pow(m as u32);
        for mut idx in 0..total {
            let mut s = Vec::with_capacity(m);
            for _ in 0..m {
                s.push(((idx % levels) as f64 + 0.5) / levels as f64);
                idx /= levels;
            }
            seeds.push(s);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5eed_5eed);
    for _ in 0..opts.random_starts {
        seeds.push((0..m).map(|_| rng.random::<f64>()).collect());
    }
    seeds
}

/// Ranks seeds by objective and refines the best `starts` by local descent.
pub(crate) fn multistart<F: Fn(&[f64], &mut [f64]) -> f64>(
    f: &F,
    seeds: &[Vec<f64>],
    lo: &[f64],
    hi: &[f64],
    starts: usize,
    lbfgs: &LbfgsOptions,
) -> (Minimum, usize) {
    let n = lo.len();
    let mut g = vec![0.0; n];
    let mut ranked: Vec<(f64, usize)> = seeds.iter().enumerate().map(|(i, s)| (f(s, &mut g), i)).collect();
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut best: Option<Minimum> = None;
    let mut iterations = 0;
    let mut tried: Vec<&Vec<f64>> = Vec::new();
    for &(f0, i) in &ranked {
        if tried.len() >= starts.max(1) {
            break;
        }
        if !f0.is_finite() || tried.iter().any(|t| *t == &seeds[i]) {
            continue;
        }
        tried.push(&seeds[i]);
        let m = minimize(f, &seeds[i], lo, hi, lbfgs);
        iterations += m.iterations;
        if best.as_ref().is_none_or(|b| m.f < b.f) {
            best = Some(m);
        }
    }
    let best = best.unwrap_or_else(|| {
        let (f0, i) = ranked[0];
        Minimum { x: seeds[i].clone(), f: f0, iterations: 0 }
    });
    (best, iterations)
}

/// Objective value, its gradient, and constraint ratios `V_q / L_q` with gradients.
pub(crate) struct CoreEval {
    pub base: f64,
    pub base_grad: Vec<f64>,
    pub ratios: Vec<f64>,
    pub ratio_grads: Vec<Vec<f64>>,
}

/// Log-barrier continuation from a strictly feasible `x0`.
pub(crate) fn barrier_descent<C: Fn(&[f64]) -> CoreEval>(
    core: &C,
    x0: &[f64],
    lo: &[f64],
    hi: &[f64],
    max_iterations: usize,
) -> (Vec<f64>, usize) {
    let mut x = x0.to_vec();
    let mut iterations = 0;
    for stage in 0..8 {
        let tau = 10f64.powi(-2 - stage);
        // Each stage only needs to track the central path to within its own weight.
        let lbfgs = LbfgsOptions { max_iterations, gradient_tolerance: tau, f_scale: 1.0, memory: 10 };
        let f = |y: &[f64], g: &mut [f64]| {
            let c = core(y);
            if c.ratios.iter().any(|&r| !(r < 1.0)) {
                return f64::INFINITY;
            }
            let mut val = c.base;
            g.copy_from_slice(&c.base_grad);
            for (r, rg) in c.ratios.iter().zip(&c.ratio_grads) {
                val -= tau * (1.0 - r).ln();
                let w = tau / (1.0 - r);
                for (gi, ri) in g.iter_mut().zip(rg) {
                    *gi += w * ri;
                }
            }
            val
        };
        let m = minimize(&f, &x, lo, hi, &lbfgs);
        iterations += m.iterations;
        if m.f.is_finite() {
            x = m.x;
        }
    }
    (x, iterations)
}

/// Builds a decision from link powers: optimal ratios, idle nodes silenced.
pub(crate) fn assemble(
    inst: &ProblemInstance,
    net: &Network,
    powers: &[f64],
    rule: PowerRule,
    routing: Routing,
) -> (Decision, Evaluation) {
    let topo = &inst.topology;
    let ev = net.evaluate(powers, false);
    let q = inst.num_services();
    let mut d = Decision::uniform(topo, q, inst.p_tot_w, inst.block);
    d.rule = rule;
    d.routing = routing;
    for x in 0..topo.num_nodes() {
        for s in 0..q {
            d.set_alpha(x, s, ev.alpha[x * q + s]);
        }
        let p0 = powers[topo.link_index(x, 0)];
        let p1 = if topo.out_degree(x) == 2 { powers[topo.link_index(x, 1)] } else { 0.0 };
        d.set_power(x, [p0, p1]);
    }
    let on = d.transmitting_nodes(topo);
    for (x, &tx) in on.iter().enumerate() {
        if !tx {
            d.set_power(x, [0.0, 0.0]);
        }
    }
    (d, ev)
}
