//! Brute-force reference for the min-latency program.
//!
//! Power splits are enumerated on a grid (every transmitting node spends the
//! cap). For each grid point the split ratios are searched on a grid too,
//! node by node from the last layer back, which is exact for the worst-path
//! objective because a node's worst downstream latency does not depend on
//! upstream ratios. Nothing here shares code with the solvers.

use super::{Mode, ProblemInstance, SolverError, SolverResult, Status};
use crate::perf::{block_metrics, link_rates, Decision, PowerRule, Routing};

/// Best point of the full power-split grid at `resolution`, with split ratios
/// searched at the same resolution. Fails when the grid needs more than
/// `max_evaluations` hop evaluations.
pub fn grid_oracle(inst: &ProblemInstance, resolution: f64, max_evaluations: f64) -> Result<SolverResult, SolverError> {
    let grid = Grid::new(inst, resolution)?;
    let needed = grid.levels.powi(grid.split_nodes.len() as i32) * grid.cost_per_point(grid.levels);
    if needed > max_evaluations {
        return Err(SolverError::OracleCap { needed, cap: max_evaluations });
    }
    let (s, _) = grid.exhaustive(grid.levels as usize, 1);
    grid.result(&s[0], grid.levels as usize, needed)
}

/// Full grid at `coarse` resolution, then cyclic one-coordinate sweeps at
/// `fine` resolution from the best coarse points. Ratios are searched at
/// `fine` resolution throughout the refinement. Used where the full fine grid
/// is out of reach; the result is still a feasible grid point.
pub fn refined_grid_oracle(
    inst: &ProblemInstance,
    coarse: f64,
    fine: f64,
    max_evaluations: f64,
) -> Result<SolverResult, SolverError> {
    let grid = Grid::new(inst, coarse)?;
    let fine_levels = levels_for(fine)?;
    let m = grid.split_nodes.len();
    let needed = grid.levels.powi(m as i32) * grid.cost_per_point(grid.levels)
        + 60.0 * m as f64 * fine_levels * grid.cost_per_point(fine_levels);
    if needed > max_evaluations {
        return Err(SolverError::OracleCap { needed, cap: max_evaluations });
    }
    let (starts, _) = grid.exhaustive(grid.levels as usize, 3);
    let fine_n = fine_levels as usize;
    let mut best: Option<(f64, Vec<f64>)> = None;
    for start in starts {
        let mut s = start;
        let mut value = grid.value(&s, fine_n);
        for _ in 0..20 {
            let before = value;
            for i in 0..m {
                let mut arg = s[i];
                for j in 0..fine_n {
                    s[i] = j as f64 / (fine_n - 1) as f64;
                    let v = grid.value(&s, fine_n);
                    if v < value {
                        value = v;
                        arg = s[i];
                    }
                }
                s[i] = arg;
            }
            if value >= before {
                break;
            }
        }
        if best.as_ref().is_none_or(|(b, _)| value < *b) {
            best = Some((value, s));
        }
    }
    let (_, s) = best.expect("grid has points");
    grid.result(&s, fine_n, needed)
}

fn levels_for(resolution: f64) -> Result<f64, SolverError> {
    if !(resolution > 0.0 && resolution <= 1.0) {
        return Err(SolverError::Instance(format!("grid resolution must lie in (0, 1], got {resolution}")));
    }
    Ok((1.0 / resolution).round() + 1.0)
}

struct Grid<'a> {
    inst: &'a ProblemInstance,
    levels: f64,
    /// Nodes with two outgoing links.
    split_nodes: Vec<usize>,
}

impl<'a> Grid<'a> {
    fn new(inst: &'a ProblemInstance, resolution: f64) -> Result<Self, SolverError> {
        if inst.mode != Mode::MinLatency {
            return Err(SolverError::OracleMode);
        }
        inst.validate()?;
        let topo = &inst.topology;
        let split_nodes = (0..topo.num_nodes()).filter(|&x| topo.out_degree(x) == 2).collect();
        Ok(Grid { inst, levels: levels_for(resolution)?, split_nodes })
    }

    fn cost_per_point(&self, alpha_levels: f64) -> f64 {
        self.inst.topology.num_nodes() as f64 * alpha_levels * self.inst.num_services() as f64
    }

    fn powers(&self, s: &[f64]) -> Vec<[f64; 2]> {
        let topo = &self.inst.topology;
        let cap = self.inst.p_tot_w;
        let mut p: Vec<[f64; 2]> = (0..topo.num_nodes()).map(|_| [cap, 0.0]).collect();
        for (i, &x) in self.split_nodes.iter().enumerate() {
            p[x] = [cap * s[i], cap * (1.0 - s[i])];
        }
        p
    }

    /// Worst latency per service and the chosen first-link ratios per node.
    fn ratios(&self, s: &[f64], alpha_levels: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
        let topo = &self.inst.topology;
        let p = self.powers(s);
        let rate = |x: usize, k: usize| self.inst.curves[topo.link_index(x, k)].rate(p[x][k]);
        let hop = |share: f64, c: f64, d: f64| {
            if share * c == 0.0 {
                0.0
            } else if d <= 0.0 {
                f64::INFINITY
            } else {
                share * c / d
            }
        };
        let nodes = topo.num_nodes();
        let services = self.inst.num_services();
        let mut worst = vec![0.0; services];
        let mut alpha = vec![vec![1.0; nodes]; services];
        for q in 0..services {
            let mut v = vec![0.0; nodes];
            for x in (0..nodes).rev() {
                let c = self.inst.traffic.bits(x, q);
                let below = |k: usize| topo.child(x, k).map_or(0.0, |ch| v[ch]);
                if topo.out_degree(x) == 1 {
                    v[x] = hop(1.0, c, rate(x, 0)) + below(0);
                    continue;
                }
                let (d0, d1, v0, v1) = (rate(x, 0), rate(x, 1), below(0), below(1));
                let mut best: (f64, f64) = (f64::INFINITY, 0.5);
                for i in 0..alpha_levels {
                    let a = i as f64 / (alpha_levels - 1) as f64;
                    let mut val = 0.0f64;
                    if a > 0.0 {
                        val = val.max(hop(a, c, d0) + v0);
                    }
                    if a < 1.0 {
                        val = val.max(hop(1.0 - a, c, d1) + v1);
                    }
                    if val < best.0 || (val == best.0 && (a - 0.5).abs() < (best.1 - 0.5).abs()) {
                        best = (val, a);
                    }
                }
                v[x] = best.0;
                alpha[q][x] = best.1;
            }
            worst[q] = v[0];
        }
        (worst, alpha)
    }

    fn value(&self, s: &[f64], alpha_levels: usize) -> f64 {
        self.ratios(s, alpha_levels).0.iter().sum()
    }

    /// The `keep` best power-split points of the full grid, best first.
    fn exhaustive(&self, n: usize, keep: usize) -> (Vec<Vec<f64>>, f64) {
        let m = self.split_nodes.len();
        let total = n.pow(m as u32);
        let mut top: Vec<(f64, Vec<f64>)> = Vec::new();
        for mut idx in 0..total {
            let mut s = Vec::with_capacity(m);
            for _ in 0..m {
                s.push((idx % n) as f64 / (n - 1) as f64);
                idx /= n;
            }
            let v = self.value(&s, n);
            if top.len() < keep || v < top[top.len() - 1].0 {
                top.push((v, s));
                top.sort_by(|a, b| a.0.total_cmp(&b.0));
                top.truncate(keep);
            }
        }
        let best = top[0].0;
        (top.into_iter().map(|(_, s)| s).collect(), best)
    }

    fn result(&self, s: &[f64], alpha_levels: usize, evaluations: f64) -> Result<SolverResult, SolverError> {
        let inst = self.inst;
        let topo = &inst.topology;
        let services = inst.num_services();
        let (_, alpha) = self.ratios(s, alpha_levels);
        let mut d = Decision::uniform(topo, services, inst.p_tot_w, inst.block);
        d.rule = PowerRule::Full;
        d.routing = Routing::Split;
        for (x, p) in self.powers(s).into_iter().enumerate() {
            d.set_power(x, p);
            if topo.out_degree(x) == 2 {
                for (q, a) in alpha.iter().enumerate() {
                    d.set_alpha(x, q, [a[x], 1.0 - a[x]]);
                }
            }
        }
        let on = d.transmitting_nodes(topo);
        for (x, &tx) in on.iter().enumerate() {
            if !tx {
                d.set_power(x, [0.0, 0.0]);
            }
        }
        let rates = link_rates(topo, &inst.curves, &d);
        let metrics = block_metrics(topo, &d, &inst.traffic, &rates, &inst.budgets_s)?;
        let objective: f64 = metrics.worst_latency_s.iter().sum();
        let status = if metrics.within_budget.iter().all(|&ok| ok) { Status::Optimal } else { Status::Infeasible };
        Ok(SolverResult {
            decision: d,
            objective,
            status,
            kkt_residual: f64::NAN,
            iterations: evaluations as usize,
            worst_latency_s: metrics.worst_latency_s,
        })
    }
}
