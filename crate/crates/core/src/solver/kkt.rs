//! First-order optimality residual of a decision.
//!
//! Both programs are written in epigraph form over path latencies `u_{q,b}`.
//! Multipliers live only on active paths (those attaining the service maximum
//! or its budget) and are fitted by nonnegative least squares to the
//! stationarity conditions of the free coordinates: interior split ratios and,
//! for links with positive power, the power variables. The residual is the
//! largest violation of a scaled stationarity row at the fitted multipliers.

use nalgebra::{DMatrix, DVector};

use super::nnls::nnls;
use super::{Mode, ProblemInstance, SolverError};
use crate::perf::{block_metrics, check_decision, link_rates, BlockMetrics, Decision, PerfError, Routing};
use crate::topology::{enumerate_paths, PathId, Topology};

/// Weight of the multiplier normalization rows in the min-latency fit.
const NORMALIZATION_WEIGHT: f64 = 1e3;
/// Interior margin for split ratios.
const INTERIOR: f64 = 1e-9;

/// Stationarity residual of `decision` for the instance's program.
///
/// Fails when the decision breaks the split or power constraints, or, for the
/// min-power program, a latency budget.
pub fn certify_kkt(inst: &ProblemInstance, decision: &Decision) -> Result<f64, SolverError> {
    inst.validate()?;
    let topo = &inst.topology;
    let violation = check_decision(topo, decision).max_violation();
    if violation > 1e-6 {
        return Err(SolverError::InfeasibleDecision { violation });
    }
    let rates = link_rates(topo, &inst.curves, decision);
    let metrics = match block_metrics(topo, decision, &inst.traffic, &rates, &inst.budgets_s) {
        Ok(m) => m,
        Err(PerfError::InfeasibleLink { .. }) => return Err(SolverError::InfeasibleDecision { violation: f64::INFINITY }),
        Err(e) => return Err(e.into()),
    };
    let model = Model { inst, d: decision, rates: &rates, metrics: &metrics, allowed: allowed_links(topo, decision) };
    Ok(match inst.mode {
        Mode::MinLatency => model.min_latency_residual(),
        Mode::MinPower => {
            let excess = metrics
                .worst_latency_s
                .iter()
                .zip(&inst.budgets_s)
                .map(|(w, l)| (w - l) / l)
                .fold(0.0, f64::max);
            if excess > 1e-6 {
                return Err(SolverError::InfeasibleDecision { violation: excess });
            }
            model.min_power_residual()
        }
    })
}

fn allowed_links(topo: &Topology, d: &Decision) -> Vec<[bool; 2]> {
    match &d.routing {
        Routing::Split => (0..topo.num_nodes()).map(|x| [true, topo.out_degree(x) == 2]).collect(),
        Routing::Fixed(paths) => {
            let mut allowed = vec![[false, false]; topo.num_nodes()];
            for &b in paths {
                for (x, k) in topo.path_hops(PathId { index: b }) {
                    allowed[x][k] = true;
                }
            }
            allowed
        }
    }
}

struct Model<'a> {
    inst: &'a ProblemInstance,
    d: &'a Decision,
    rates: &'a [f64],
    metrics: &'a BlockMetrics,
    allowed: Vec<[bool; 2]>,
}

impl Model<'_> {
    fn topo(&self) -> &Topology {
        &self.inst.topology
    }

    /// Routed paths of service `q` whose latency reaches `level·(1 − tol)`.
    fn active(&self, q: usize, level: f64, tol: f64) -> Vec<usize> {
        enumerate_paths(self.topo())
            .into_iter()
            .map(|b| b.index)
            .filter(|&b| self.metrics.routed[q][b] && level > 0.0 && self.metrics.path_latency_s[q][b] >= level * (1.0 - tol))
            .collect()
    }

    /// `∂u_{q,b}/∂α₀` at node `x`, with `α₁ = 1 − α₀`.
    fn du_dalpha(&self, q: usize, b: usize, x: usize) -> f64 {
        let topo = self.topo();
        let c = self.inst.traffic.bits(x, q);
        match topo.path_hops(PathId { index: b }).into_iter().find(|(n, _)| *n == x) {
            Some((_, 0)) => c / self.rates[topo.link_index(x, 0)],
            Some(_) => -c / self.rates[topo.link_index(x, 1)],
            None => 0.0,
        }
    }

    /// `∂u_{q,b}/∂P` for link `k` of node `x`.
    fn du_dpower(&self, q: usize, b: usize, x: usize, k: usize) -> f64 {
        let topo = self.topo();
        let on_path = topo.path_hops(PathId { index: b }).into_iter().any(|h| h == (x, k));
        let c = self.d.alpha(x, q)[k] * self.inst.traffic.bits(x, q);
        if !on_path || c == 0.0 {
            return 0.0;
        }
        let link = topo.link_index(x, k);
        let r = self.rates[link];
        -c * self.inst.curves[link].rate_slope(self.d.power(x)[k]) / (r * r)
    }

    /// Nodes and services whose split ratio is a free interior coordinate.
    fn interior_splits(&self) -> Vec<(usize, usize)> {
        let topo = self.topo();
        let mut out = Vec::new();
        for x in 0..topo.num_nodes() {
            if topo.out_degree(x) != 2 || !(self.allowed[x][0] && self.allowed[x][1]) {
                continue;
            }
            for q in 0..self.inst.num_services() {
                let a = self.d.alpha(x, q)[0];
                if a > INTERIOR && a < 1.0 - INTERIOR && self.inst.traffic.bits(x, q) > 0.0 {
                    out.push((x, q));
                }
            }
        }
        out
    }

    fn min_latency_residual(&self) -> f64 {
        let topo = self.topo();
        let services = self.inst.num_services();
        let worst = &self.metrics.worst_latency_s;
        let total: f64 = worst.iter().sum();
        if total == 0.0 {
            return 0.0;
        }
        let cols: Vec<(usize, usize)> =
            (0..services).flat_map(|q| self.active(q, worst[q], 1e-7).into_iter().map(move |b| (q, b))).collect();
        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut rhs = Vec::new();
        let mut weights = Vec::new();
        for q in (0..services).filter(|&q| worst[q] > 0.0) {
            rows.push(cols.iter().map(|&(cq, _)| if cq == q { NORMALIZATION_WEIGHT } else { 0.0 }).collect());
            rhs.push(NORMALIZATION_WEIGHT);
            weights.push(NORMALIZATION_WEIGHT);
        }
        for (x, q) in self.interior_splits() {
            rows.push(cols.iter().map(|&(cq, b)| if cq == q { self.du_dalpha(q, b, x) / worst[q] } else { 0.0 }).collect());
            rhs.push(0.0);
            weights.push(1.0);
        }
        let cap = self.d.cap_w;
        for x in 0..topo.num_nodes() {
            let p = self.d.power(x);
            if topo.out_degree(x) == 2 && self.allowed[x][0] && self.allowed[x][1] && p[0] > 0.0 && p[1] > 0.0 {
                rows.push(
                    cols.iter()
                        .map(|&(q, b)| cap * (self.du_dpower(q, b, x, 0) - self.du_dpower(q, b, x, 1)) / total)
                        .collect(),
                );
                rhs.push(0.0);
                weights.push(1.0);
            }
        }
        fit(&rows, &rhs, &weights, cols.len())
    }

    fn min_power_residual(&self) -> f64 {
        let topo = self.topo();
        let services = self.inst.num_services();
        let budgets = &self.inst.budgets_s;
        let total = self.d.total_power_w();
        if total == 0.0 {
            return 0.0;
        }
        let paths: Vec<(usize, usize)> =
            (0..services).flat_map(|q| self.active(q, budgets[q], 1e-6).into_iter().map(move |b| (q, b))).collect();
        let cap = self.d.cap_w;
        let at_cap: Vec<usize> =
            (0..topo.num_nodes()).filter(|&x| self.d.power(x)[0] + self.d.power(x)[1] >= cap * (1.0 - 1e-9)).collect();
        let ncols = paths.len() + at_cap.len();
        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut rhs = Vec::new();
        for x in 0..topo.num_nodes() {
            for k in 0..topo.out_degree(x) {
                if self.d.power(x)[k] <= 0.0 {
                    continue;
                }
                let mut row: Vec<f64> =
                    paths.iter().map(|&(q, b)| self.du_dpower(q, b, x, k) * total / budgets[q]).collect();
                row.extend(at_cap.iter().map(|&n| if n == x { 1.0 } else { 0.0 }));
                rows.push(row);
                rhs.push(-1.0);
            }
        }
        for (x, q) in self.interior_splits() {
            let mut row: Vec<f64> =
                paths.iter().map(|&(cq, b)| if cq == q { self.du_dalpha(q, b, x) / budgets[q] } else { 0.0 }).collect();
            row.resize(ncols, 0.0);
            rows.push(row);
            rhs.push(0.0);
        }
        let weights = vec![1.0; rows.len()];
        fit(&rows, &rhs, &weights, ncols)
    }
}

/// Largest scaled row residual of the nonnegative least-squares fit.
fn fit(rows: &[Vec<f64>], rhs: &[f64], weights: &[f64], ncols: usize) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    let a = DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]);
    let b = DVector::from_column_slice(rhs);
    let mu = nnls(&a, &b);
    let r = &a * &mu - &b;
    r.iter().zip(weights).map(|(v, w)| (v / w).abs()).fold(0.0, f64::max)
}
