//! Minimum total power under per-service latency budgets.

use super::kkt::certify_kkt;
use super::polish::polish_min_power;
use super::min_latency::{minimize_splits, Aggregate};
use super::search::{assemble, barrier_descent, build_network, ranked_paths, routing_for, CoreEval, Layout};
use super::{Mode, PathSet, ProblemInstance, SolverError, SolverOptions, SolverResult, Status};
use crate::perf::{block_metrics, link_rates, Decision, PerfError, PowerRule, Routing};
use crate::topology::PathId;

/// Relative slack below which a full-power point already meets a budget exactly.
const BOUNDARY: f64 = 1e-7;
/// Relative excess tolerated before a budget counts as unattainable.
const ATTAINABLE: f64 = 1e-6;
/// Relative gap to the budget accepted as binding.
const WITNESS: f64 = 1e-3;
/// Power factor over the tightened seed where local descent starts.
const SEED_BACKOFF: f64 = 1.02;
/// Best-ranked paths whose pairs seed the local descent.
const PAIR_SEED_PATHS: usize = 8;
/// Best-scored pairs also solved on their own subgraph.
const PAIR_SUBGRAPH_SOLVES: usize = 2;

/// Minimum-power solve over the whole network.
pub fn solve_min_power(inst: &ProblemInstance, opts: &SolverOptions) -> Result<SolverResult, SolverError> {
    solve_min_power_on(inst, &PathSet::All, opts)
}

/// Minimum-power solve restricted to a path set.
pub fn solve_min_power_on(inst: &ProblemInstance, paths: &PathSet, opts: &SolverOptions) -> Result<SolverResult, SolverError> {
    inst.with_mode(Mode::MinPower).validate()?;
    let net = build_network(inst, paths);
    let layout = Layout::new(&net);
    let routing = routing_for(&net, paths);
    let cap = inst.p_tot_w;
    let services = inst.num_services();
    let budgets = &inst.budgets_s;

    let idle = layout.active.iter().all(|&x| (0..services).all(|q| net.bits(x, q) == 0.0));
    if idle {
        let (d, _) = assemble(inst, &net, &vec![0.0; inst.topology.num_links()], PowerRule::Capped, routing);
        return finish_min_power(inst, d, 0, opts);
    }

    let max_ratio = |p: &[f64]| -> f64 {
        let ev = net.evaluate(p, false);
        ev.values.iter().zip(budgets).map(|(v, l)| v / l).fold(0.0, f64::max)
    };

    // Full-power point with the most budget room.
    let inv: Vec<f64> = budgets.iter().map(|l| 1.0 / l).collect();
    let (mut s0, mut iterations) = minimize_splits(&net, &layout, cap, &Aggregate::Weighted(inv.clone()), opts);
    let mut r0 = max_ratio(&layout.full_powers(&net, cap, &s0));
    if r0 >= 1.0 - BOUNDARY && services > 1 {
        let (s1, it) = minimize_splits(&net, &layout, cap, &Aggregate::SoftMax(inv, 200.0), opts);
        iterations += it;
        let r1 = max_ratio(&layout.full_powers(&net, cap, &s1));
        if r1 < r0 {
            s0 = s1;
            r0 = r1;
        }
    }
    if r0 > 1.0 + ATTAINABLE || r0 >= 1.0 - BOUNDARY {
        let (mut d, _) = assemble(inst, &net, &layout.full_powers(&net, cap, &s0), PowerRule::Capped, routing);
        if r0 <= 1.0 + ATTAINABLE {
            bind_slack_services(inst, &mut d)?;
            d = polish_min_power(inst, &d).unwrap_or(d);
        }
        return finish_min_power(inst, d, iterations, opts);
    }

    let na = layout.active.len();
    let unit = 1.0 / (cap * na as f64);
    let core = |x: &[f64]| {
        let p = layout.capped_powers(&net, x);
        let ev = net.evaluate(&p, true);
        let mut base_grad = vec![0.0; x.len()];
        base_grad[..na].iter_mut().for_each(|g| *g = unit);
        let ratio_grads = (0..services)
            .map(|q| {
                let lg: Vec<f64> = ev.grad[q].iter().map(|g| g / budgets[q]).collect();
                let mut out = vec![0.0; x.len()];
                layout.capped_grad(&net, x, &lg, &mut out);
                out
            })
            .collect();
        CoreEval {
            base: x[..na].iter().sum::<f64>() * unit,
            base_grad,
            ratios: ev.values.iter().zip(budgets).map(|(v, l)| v / l).collect(),
            ratio_grads,
        }
    };

    // Candidate starts, ranked by the power left after a uniform scale-down
    // to the tightest budget.
    let ranked = ranked_paths(&net, cap);
    let mut starts = vec![layout.capped_from_full(cap, &s0), layout.capped_from_full(cap, &vec![0.5; layout.split.len()])];
    starts.extend(ranked.iter().take(4).map(|&b| layout.capped_from_full(cap, &layout.path_splits(&net, b))));
    let singles = starts.len();
    let top = &ranked[..ranked.len().min(PAIR_SEED_PATHS)];
    let mut pairs = Vec::new();
    for (i, &a) in top.iter().enumerate() {
        for &b in &top[i + 1..] {
            starts.push(layout.pair_seed(&net, cap, a, b));
            pairs.push((a, b));
        }
    }
    let mut seeds: Vec<(f64, Vec<f64>)> = Vec::new();
    let mut pair_scores: Vec<(f64, [usize; 2])> = Vec::new();
    for (i, x) in starts.into_iter().enumerate() {
        if max_ratio(&layout.capped_powers(&net, &x)) >= 1.0 - BOUNDARY {
            continue;
        }
        // Start just inside the budget rather than at full power.
        let mut t = tighten(&x, na, |y| max_ratio(&layout.capped_powers(&net, y)));
        let score = t[..na].iter().sum();
        if let Some(&(a, b)) = i.checked_sub(singles).and_then(|j| pairs.get(j)) {
            pair_scores.push((score, [a, b]));
        }
        t[..na].iter_mut().for_each(|v| *v = (*v * SEED_BACKOFF).min(cap));
        if max_ratio(&layout.capped_powers(&net, &t)) >= 1.0 - BOUNDARY {
            t = x;
        }
        if !seeds.iter().any(|(_, y)| *y == t) {
            seeds.push((score, t));
        }
    }
    if seeds.is_empty() {
        seeds.push((r0, layout.capped_from_full(cap, &s0)));
    }
    seeds.sort_by(|a, b| a.0.total_cmp(&b.0));

    let (lo, hi) = layout.capped_bounds(cap);
    let mut best: Option<(f64, Vec<f64>)> = None;
    for (_, x0) in seeds.iter().take(opts.local_starts.max(1)) {
        let (x, it) = barrier_descent(&core, x0, &lo, &hi, opts.max_iterations);
        iterations += it;
        let x = tighten(&x, na, |y| max_ratio(&layout.capped_powers(&net, y)));
        let total: f64 = x[..na].iter().sum();
        if best.as_ref().is_none_or(|(b, _)| total < *b) {
            best = Some((total, x));
        }
    }
    let (_, x) = best.expect("at least one seed");
    let (mut d, _) = assemble(inst, &net, &layout.capped_powers(&net, &x), PowerRule::Capped, routing.clone());
    let descended = d.clone();
    bind_slack_services(inst, &mut d)?;
    let d = polish_min_power(inst, &d).unwrap_or(d);
    let mut result = finish_min_power(inst, d, iterations, opts)?;
    // Post-processing must not lose feasibility that the descent or the
    // full-power start already had.
    if result.status == Status::Infeasible {
        result = finish_min_power(inst, descended, iterations, opts)?;
    }
    if result.status == Status::Infeasible {
        let (d, _) = assemble(inst, &net, &layout.full_powers(&net, cap, &s0), PowerRule::Capped, routing);
        result = finish_min_power(inst, d, iterations, opts)?;
    }

    // Descent over all paths cannot leave a basin where an extra path would
    // first add its latency, so the best pairs are also solved on their own
    // subgraph. Those decisions stay feasible with split routing.
    if *paths == PathSet::All && inst.topology.num_paths() > 2 {
        pair_scores.sort_by(|a, b| a.0.total_cmp(&b.0));
        let pair_opts = SolverOptions { local_starts: 1, ..opts.clone() };
        for &(_, pair) in pair_scores.iter().take(PAIR_SUBGRAPH_SOLVES) {
            let r = solve_min_power_on(inst, &PathSet::Only(pair.to_vec()), &pair_opts)?;
            result.iterations += r.iterations;
            if r.status == Status::Infeasible || r.objective >= result.objective {
                continue;
            }
            let mut d = r.decision;
            d.routing = Routing::Split;
            let mut candidate = finish_min_power(inst, d, result.iterations, opts)?;
            if candidate.status != Status::Infeasible && candidate.objective < result.objective {
                // Stationarity holds on the subgraph program; the all-path
                // system does not apply where a path's latency switches off.
                candidate.status = r.status;
                candidate.kkt_residual = r.kkt_residual;
                result = candidate;
            }
        }
    }
    Ok(result)
}

/// Scales all node totals down until the tightest budget binds.
fn tighten<F: Fn(&[f64]) -> f64>(x: &[f64], na: usize, max_ratio: F) -> Vec<f64> {
    let scaled = |k: f64| {
        let mut y = x.to_vec();
        y[..na].iter_mut().for_each(|t| *t *= k);
        y
    };
    if max_ratio(x) > 1.0 {
        return x.to_vec();
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if max_ratio(&scaled(mid)) <= 1.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    scaled(hi)
}

/// Services whose worst latency sits below budget have no use for the slack,
/// since their ratios do not affect power. Their ratios are moved toward the
/// slowest single path until the budget binds, keeping the powers unchanged.
fn bind_slack_services(inst: &ProblemInstance, d: &mut Decision) -> Result<(), SolverError> {
    let topo = &inst.topology;
    let rates = link_rates(topo, &inst.curves, d);
    let candidates: Vec<usize> = match &d.routing {
        Routing::Fixed(p) => p.clone(),
        Routing::Split => (0..topo.num_paths()).collect(),
    };
    for q in 0..inst.num_services() {
        let budget = inst.budgets_s[q];
        let worst = block_metrics(topo, d, &inst.traffic, &rates, &inst.budgets_s)?.worst_latency_s[q];
        if worst >= budget * (1.0 - WITNESS) || worst == 0.0 {
            continue;
        }
        // Slowest usable single path at the current rates.
        let slowest = candidates
            .iter()
            .filter_map(|&b| {
                let hops = topo.path_hops(PathId { index: b });
                let mut u = 0.0;
                for &(x, k) in &hops {
                    let c = inst.traffic.bits(x, q);
                    if c > 0.0 {
                        let r = rates[topo.link_index(x, k)];
                        if r <= 0.0 {
                            return None;
                        }
                        u += c / r;
                    }
                }
                Some((u, b))
            })
            .max_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(&a.1)));
        let Some((u_slow, b_slow)) = slowest else { continue };
        if u_slow < budget * (1.0 - WITNESS) {
            continue;
        }
        let original: Vec<[f64; 2]> = (0..topo.num_nodes()).map(|x| d.alpha(x, q)).collect();
        let mut target = original.clone();
        for (x, k) in topo.path_hops(PathId { index: b_slow }) {
            if topo.out_degree(x) == 2 {
                target[x] = if k == 0 { [1.0, 0.0] } else { [0.0, 1.0] };
            }
        }
        let blend = |d: &mut Decision, theta: f64| {
            for x in 0..topo.num_nodes() {
                let a0 = (1.0 - theta) * original[x][0] + theta * target[x][0];
                d.set_alpha(x, q, [a0, 1.0 - a0]);
            }
        };
        let latency = |d: &Decision| -> Result<f64, PerfError> {
            Ok(block_metrics(topo, d, &inst.traffic, &rates, &inst.budgets_s)?.worst_latency_s[q])
        };
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            blend(d, mid);
            if latency(d)? <= budget {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        blend(d, lo);
    }
    Ok(())
}

/// Scores a min-power decision and sets its status.
fn finish_min_power(inst: &ProblemInstance, decision: Decision, iterations: usize, opts: &SolverOptions) -> Result<SolverResult, SolverError> {
    let rates = link_rates(&inst.topology, &inst.curves, &decision);
    let (worst, feasible) = match block_metrics(&inst.topology, &decision, &inst.traffic, &rates, &inst.budgets_s) {
        Ok(m) => {
            let ok = m.worst_latency_s.iter().zip(&inst.budgets_s).all(|(w, l)| *w <= l * (1.0 + ATTAINABLE));
            (m.worst_latency_s, ok)
        }
        Err(PerfError::InfeasibleLink { .. }) => (vec![f64::INFINITY; inst.num_services()], false),
        Err(e) => return Err(e.into()),
    };
    let objective = decision.total_power_w();
    let (status, kkt_residual) = if feasible {
        let r = certify_kkt(&inst.with_mode(Mode::MinPower), &decision).unwrap_or(f64::INFINITY);
        (if r <= opts.kkt_tolerance { Status::Optimal } else { Status::MaxIterations }, r)
    } else {
        (Status::Infeasible, f64::NAN)
    };
    Ok(SolverResult { decision, objective, status, kkt_residual, iterations, worst_latency_s: worst })
}
