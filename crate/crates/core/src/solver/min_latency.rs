//! Minimum worst-path latency at full per-node power.

use super::kkt::certify_kkt;
use super::lbfgs::LbfgsOptions;
use super::network::Network;
use super::search::{assemble, barrier_descent, build_network, multistart, routing_for, split_seeds, CoreEval, Layout};
use super::{Mode, PathSet, ProblemInstance, SolverError, SolverOptions, SolverResult, Status};
use crate::perf::{block_metrics, link_rates, Decision, PerfError, PowerRule};

/// How service latencies are combined into one objective.
#[derive(Debug, Clone)]
pub(crate) enum Aggregate {
    /// `Σ_q w_q·V_q`.
    Weighted(Vec<f64>),
    /// Smooth maximum of `V_q·w_q` with sharpness `beta`.
    SoftMax(Vec<f64>, f64),
}

impl Aggregate {
    fn combine(&self, values: &[f64], weights_out: &mut [f64]) -> f64 {
        match self {
            Aggregate::Weighted(w) => {
                weights_out.copy_from_slice(w);
                values.iter().zip(w).map(|(v, w)| v * w).sum()
            }
            Aggregate::SoftMax(w, beta) => {
                let scaled: Vec<f64> = values.iter().zip(w).map(|(v, w)| v * w).collect();
                let m = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                if !m.is_finite() {
                    return m;
                }
                let e: Vec<f64> = scaled.iter().map(|s| (beta * (s - m)).exp()).collect();
                let z: f64 = e.iter().sum();
                for i in 0..values.len() {
                    weights_out[i] = w[i] * e[i] / z;
                }
                m + z.ln() / beta
            }
        }
    }
}

/// Minimizes an aggregate of service latencies over power splits at full power.
/// Returns the best splits and the iterations spent.
pub(crate) fn minimize_splits(
    net: &Network,
    layout: &Layout,
    cap: f64,
    agg: &Aggregate,
    opts: &SolverOptions,
) -> (Vec<f64>, usize) {
    let m = layout.split.len();
    let services = net.services;
    let f = |s: &[f64], g: &mut [f64]| {
        let p = layout.full_powers(net, cap, s);
        let ev = net.evaluate(&p, true);
        let mut w = vec![0.0; services];
        let val = agg.combine(&ev.values, &mut w);
        if !val.is_finite() {
            return f64::INFINITY;
        }
        let mut link_grad = vec![0.0; p.len()];
        for q in 0..services {
            for (lg, gq) in link_grad.iter_mut().zip(&ev.grad[q]) {
                *lg += w[q] * gq;
            }
        }
        layout.full_grad(net, cap, &link_grad, g);
        val
    };
    let seeds = split_seeds(net, layout, cap, opts);
    let (lo, hi) = (vec![0.0; m], vec![1.0; m]);
    let lbfgs = LbfgsOptions { max_iterations: opts.max_iterations, gradient_tolerance: 1e-12, f_scale: 0.0, memory: 8 };
    let (best, iterations) = multistart(&f, &seeds, &lo, &hi, opts.local_starts, &lbfgs);
    (best.x, iterations)
}

/// Minimum-latency solve over the whole network.
pub fn solve_min_latency(inst: &ProblemInstance, opts: &SolverOptions) -> Result<SolverResult, SolverError> {
    solve_min_latency_on(inst, &PathSet::All, opts)
}

/// Minimum-latency solve restricted to a path set.
pub fn solve_min_latency_on(inst: &ProblemInstance, paths: &PathSet, opts: &SolverOptions) -> Result<SolverResult, SolverError> {
    inst.validate()?;
    let net = build_network(inst, paths);
    let layout = Layout::new(&net);
    let cap = inst.p_tot_w;
    let services = inst.num_services();
    let (mut s, mut iterations) = minimize_splits(&net, &layout, cap, &Aggregate::Weighted(vec![1.0; services]), opts);

    let ratios = |s: &[f64]| -> Vec<f64> {
        let ev = net.evaluate(&layout.full_powers(&net, cap, s), false);
        ev.values.iter().zip(&inst.budgets_s).map(|(v, l)| v / l).collect()
    };
    if opts.enforce_latency_budget && ratios(&s).iter().any(|&r| r > 1.0) {
        let inv: Vec<f64> = inst.budgets_s.iter().map(|l| 1.0 / l).collect();
        let (start, it) = minimize_splits(&net, &layout, cap, &Aggregate::SoftMax(inv, 200.0), opts);
        iterations += it;
        if ratios(&start).iter().all(|&r| r < 1.0) {
            let scale: f64 = inst.budgets_s.iter().sum();
            let core = |x: &[f64]| {
                let p = layout.full_powers(&net, cap, x);
                let ev = net.evaluate(&p, true);
                let mut base_grad = vec![0.0; x.len()];
                let total: Vec<f64> = (0..p.len()).map(|l| (0..services).map(|q| ev.grad[q][l]).sum::<f64>() / scale).collect();
                layout.full_grad(&net, cap, &total, &mut base_grad);
                let ratio_grads = (0..services)
                    .map(|q| {
                        let lg: Vec<f64> = ev.grad[q].iter().map(|g| g / inst.budgets_s[q]).collect();
                        let mut out = vec![0.0; x.len()];
                        layout.full_grad(&net, cap, &lg, &mut out);
                        out
                    })
                    .collect();
                CoreEval {
                    base: ev.values.iter().sum::<f64>() / scale,
                    base_grad,
                    ratios: ev.values.iter().zip(&inst.budgets_s).map(|(v, l)| v / l).collect(),
                    ratio_grads,
                }
            };
            let m = s.len();
            let (x, it) = barrier_descent(&core, &start, &vec![0.0; m], &vec![1.0; m], opts.max_iterations);
            iterations += it;
            s = x;
        }
    }

    let powers = layout.full_powers(&net, cap, &s);
    let (decision, _) = assemble(inst, &net, &powers, PowerRule::Full, routing_for(&net, paths));
    finish_min_latency(inst, decision, iterations, opts)
}

/// Scores a min-latency decision and sets its status.
pub(crate) fn finish_min_latency(
    inst: &ProblemInstance,
    decision: Decision,
    iterations: usize,
    opts: &SolverOptions,
) -> Result<SolverResult, SolverError> {
    let rates = link_rates(&inst.topology, &inst.curves, &decision);
    let (worst, within) = match block_metrics(&inst.topology, &decision, &inst.traffic, &rates, &inst.budgets_s) {
        Ok(m) => (m.worst_latency_s, m.within_budget.iter().all(|&ok| ok)),
        Err(PerfError::InfeasibleLink { .. }) => (vec![f64::INFINITY; inst.num_services()], false),
        Err(e) => return Err(e.into()),
    };
    let objective: f64 = worst.iter().sum();
    let (status, kkt_residual) = if !objective.is_finite() || !within {
        (Status::Infeasible, f64::NAN)
    } else {
        let r = certify_kkt(&inst.with_mode(Mode::MinLatency), &decision).unwrap_or(f64::INFINITY);
        (if r <= opts.kkt_tolerance { Status::Optimal } else { Status::MaxIterations }, r)
    };
    Ok(SolverResult { decision, objective, status, kkt_residual, iterations, worst_latency_s: worst })
}

/// Ratios chosen optimally for the given per-node powers (`[node][k]`) on a
/// path set; no power optimization.
pub fn evaluate_fixed_power(
    inst: &ProblemInstance,
    paths: &PathSet,
    node_powers: &[[f64; 2]],
    rule: PowerRule,
) -> Result<Decision, SolverError> {
    inst.validate()?;
    let topo = &inst.topology;
    if node_powers.len() != topo.num_nodes() {
        return Err(SolverError::Instance("one power pair per node required".into()));
    }
    let net = build_network(inst, paths);
    let mut powers = vec![0.0; topo.num_links()];
    for (x, p) in node_powers.iter().enumerate() {
        for k in 0..topo.out_degree(x) {
            powers[topo.link_index(x, k)] = p[k];
        }
    }
    let (d, _) = assemble(inst, &net, &powers, rule, routing_for(&net, paths));
    Ok(d)
}
