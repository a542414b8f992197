//! Newton refinement of a min-power point on its active set.
//!
//! The support (powered links, interior split ratios, paths of binding
//! services at their budget, nodes at the cap) is frozen and the first-order
//! system with those constraints held as equalities is solved by damped
//! Newton steps. A budget whose multiplier comes out negative is released and
//! the system re-solved, as in an active-set method.

use nalgebra::{DMatrix, DVector};

use super::ProblemInstance;
use crate::perf::{block_metrics, link_rates, Decision};
use crate::topology::{enumerate_paths, PathId};

/// Relative gap to the service maximum for a path to join the active set.
const ACTIVE: f64 = 1e-4;
/// Split ratios closer than this to 0 or 1 are treated as fixed.
const INTERIOR: f64 = 1e-9;
const MAX_STEPS: usize = 60;
/// Convergence threshold on the largest scaled residual.
const TOLERANCE: f64 = 1e-12;

struct Problem<'a> {
    inst: &'a ProblemInstance,
    base: Decision,
    cap: f64,
    /// Powered links as `(node, k)`.
    links: Vec<(usize, usize)>,
    /// Interior split ratios as `(node, service)`.
    splits: Vec<(usize, usize)>,
    /// Active paths as `(service, path)`.
    paths: Vec<(usize, usize)>,
    /// Nodes at the cap.
    capped: Vec<usize>,
}

/// Link-level terms at a point.
struct Hop {
    rate: f64,
    slope: f64,
    curvature: f64,
}

impl Problem<'_> {
    fn primal_len(&self) -> usize {
        self.links.len() + self.splits.len()
    }

    fn len(&self) -> usize {
        self.primal_len() + self.paths.len() + self.capped.len()
    }

    fn decision(&self, z: &[f64]) -> Decision {
        let mut d = self.base.clone();
        for (i, &(x, k)) in self.links.iter().enumerate() {
            let mut p = d.power(x);
            p[k] = z[i] * self.cap;
            d.set_power(x, p);
        }
        for (j, &(x, q)) in self.splits.iter().enumerate() {
            let a = z[self.links.len() + j];
            d.set_alpha(x, q, [a, 1.0 - a]);
        }
        d
    }

    fn hop(&self, d: &Decision, x: usize, k: usize) -> Hop {
        let topo = &self.inst.topology;
        let curve = &self.inst.curves[topo.link_index(x, k)];
        let p = d.power(x)[k];
        let slope = curve.rate_slope(p);
        let g = curve.gain / curve.noise_w;
        Hop { rate: curve.rate(p), slope, curvature: -slope * g / (1.0 + g * p) }
    }

    /// Residual vector and Jacobian of the first-order system at `z`.
    fn system(&self, z: &[f64]) -> Option<(DVector<f64>, DMatrix<f64>)> {
        let inst = self.inst;
        let topo = &inst.topology;
        let d = self.decision(z);
        let n = self.len();
        let (nl, np) = (self.links.len(), self.primal_len());
        let lambda = &z[np..np + self.paths.len()];
        let mu = &z[np + self.paths.len()..];
        let mut f = DVector::zeros(n);
        let mut jac = DMatrix::zeros(n, n);
        let link_var = |x: usize, k: usize| self.links.iter().position(|&l| l == (x, k));
        let split_var = |x: usize, q: usize| self.splits.iter().position(|&s| s == (x, q)).map(|j| nl + j);

        for i in 0..nl {
            f[i] = 1.0;
        }
        for (c, &(q, b)) in self.paths.iter().enumerate() {
            let budget = inst.budgets_s[q];
            let row = np + c;
            let mut u = 0.0;
            for (x, k) in topo.path_hops(PathId { index: b }) {
                let bits = inst.traffic.bits(x, q);
                let share = d.alpha(x, q)[k];
                if bits == 0.0 {
                    continue;
                }
                let sv = split_var(x, q);
                if share == 0.0 && sv.is_none() {
                    continue;
                }
                let h = self.hop(&d, x, k);
                if h.rate <= 0.0 {
                    return None;
                }
                u += share * bits / h.rate;
                // ∂u/∂α₀ is ±c/D; ∂u/∂P is −α·c·D'/D².
                let sign = if k == 0 { 1.0 } else { -1.0 };
                let du_dp = -share * bits * h.slope / (h.rate * h.rate);
                let d2u_dp2 = share * bits * (2.0 * h.slope * h.slope / h.rate.powi(3) - h.curvature / (h.rate * h.rate));
                let d2u_dadp = -sign * bits * h.slope / (h.rate * h.rate);
                let lv = link_var(x, k);
                if let Some(i) = lv {
                    let s = self.cap / budget;
                    f[i] += lambda[c] * s * du_dp;
                    jac[(i, row)] += s * du_dp;
                    jac[(row, i)] += s * du_dp;
                    jac[(i, i)] += lambda[c] * s * self.cap * d2u_dp2;
                }
                if let Some(j) = sv {
                    let dua = sign * bits / h.rate;
                    f[j] += lambda[c] * dua / budget;
                    jac[(j, row)] += dua / budget;
                    jac[(row, j)] += dua / budget;
                    if let Some(i) = lv {
                        let v = lambda[c] * self.cap * d2u_dadp / budget;
                        jac[(i, j)] += v;
                        jac[(j, i)] += v;
                    }
                }
            }
            f[row] = u / budget - 1.0;
        }
        for (m, &x) in self.capped.iter().enumerate() {
            let row = np + self.paths.len() + m;
            let mut total = -1.0;
            for k in 0..topo.out_degree(x) {
                if let Some(i) = link_var(x, k) {
                    total += z[i];
                    f[i] += mu[m];
                    jac[(i, row)] += 1.0;
                    jac[(row, i)] += 1.0;
                } else {
                    total += d.power(x)[k] / self.cap;
                }
            }
            f[row] = total;
        }
        Some((f, jac))
    }

    fn primal_ok(&self, z: &[f64]) -> bool {
        let nl = self.links.len();
        z[..nl].iter().all(|&p| p > 0.0 && p <= 1.0 + 1e-12)
            && z[nl..self.primal_len()].iter().all(|&a| a > INTERIOR && a < 1.0 - INTERIOR)
    }
}

/// Budget within which a service counts as binding.
const BINDING: f64 = 1e-4;

/// Refines `d` to a stationary point of the min-power program on its support.
/// Returns `None` when no usable solution exists near `d`.
pub(crate) fn polish_min_power(inst: &ProblemInstance, d: &Decision) -> Option<Decision> {
    let rates = link_rates(&inst.topology, &inst.curves, d);
    let metrics = block_metrics(&inst.topology, d, &inst.traffic, &rates, &inst.budgets_s).ok()?;
    let mut binding: Vec<usize> = (0..inst.num_services())
        .filter(|&q| metrics.worst_latency_s[q] > 0.0 && metrics.worst_latency_s[q] >= inst.budgets_s[q] * (1.0 - BINDING))
        .collect();
    while !binding.is_empty() {
        let (out, multipliers) = solve_support(inst, d, &binding)?;
        // Release the budget with the most negative multiplier, if any.
        let worst = binding
            .iter()
            .map(|&q| (q, multipliers.iter().filter(|(s, _)| *s == q).map(|(_, v)| *v).fold(f64::INFINITY, f64::min)))
            .min_by(|a, b| a.1.total_cmp(&b.1))?;
        if worst.1 >= -1e-9 {
            return Some(out);
        }
        binding.retain(|&q| q != worst.0);
    }
    None
}

/// Newton solve with the budgets of `binding` services held as equalities.
/// Returns the decision and each active path's multiplier by service.
fn solve_support(inst: &ProblemInstance, d: &Decision, binding: &[usize]) -> Option<(Decision, Vec<(usize, f64)>)> {
    let topo = &inst.topology;
    let services = inst.num_services();
    let cap = d.cap_w;
    let rates = link_rates(topo, &inst.curves, d);
    let metrics = block_metrics(topo, d, &inst.traffic, &rates, &inst.budgets_s).ok()?;

    let carries = |x: usize, k: usize| (0..services).any(|q| d.alpha(x, q)[k] > 0.0 && inst.traffic.bits(x, q) > 0.0);
    let mut base = d.clone();
    let mut links = Vec::new();
    for x in 0..topo.num_nodes() {
        for k in 0..topo.out_degree(x) {
            if d.power(x)[k] > 0.0 {
                if carries(x, k) {
                    links.push((x, k));
                } else {
                    // Power on a link nobody uses is pure waste.
                    let mut p = base.power(x);
                    p[k] = 0.0;
                    base.set_power(x, p);
                }
            }
        }
    }
    let splits: Vec<(usize, usize)> = (0..topo.num_nodes())
        .filter(|&x| topo.out_degree(x) == 2 && links.contains(&(x, 0)) && links.contains(&(x, 1)))
        .flat_map(|x| (0..services).map(move |q| (x, q)))
        .filter(|&(x, q)| {
            let a = d.alpha(x, q)[0];
            binding.contains(&q) && a > INTERIOR && a < 1.0 - INTERIOR && inst.traffic.bits(x, q) > 0.0
        })
        .collect();
    let mut paths = Vec::new();
    for &q in binding {
        let worst = metrics.worst_latency_s[q];
        for b in enumerate_paths(topo).into_iter().map(|b| b.index) {
            if metrics.routed[q][b] && metrics.path_latency_s[q][b] >= worst * (1.0 - ACTIVE) {
                paths.push((q, b));
            }
        }
    }
    let capped: Vec<usize> =
        (0..topo.num_nodes()).filter(|&x| d.power(x)[0] + d.power(x)[1] >= cap * (1.0 - 1e-9) && links.iter().any(|l| l.0 == x)).collect();
    if links.is_empty() || paths.is_empty() {
        return None;
    }
    let pr = Problem { inst, base, cap, links, splits, paths, capped };

    let np = pr.primal_len();
    let mut z: Vec<f64> = pr.links.iter().map(|&(x, k)| d.power(x)[k] / cap).collect();
    z.extend(pr.splits.iter().map(|&(x, q)| d.alpha(x, q)[0]));
    z.resize(pr.len(), 0.0);
    // Multipliers from a least-squares fit of the stationarity rows.
    let (f0, j0) = pr.system(&z)?;
    let a = j0.view((0, np), (np, pr.len() - np)).clone_owned();
    let rhs = -f0.rows(0, np).clone_owned();
    let mult = a.svd(true, true).solve(&rhs, 1e-14).ok()?;
    z[np..].copy_from_slice(mult.as_slice());

    let norm = |f: &DVector<f64>| f.amax();
    let (mut f, mut jac) = pr.system(&z)?;
    for _ in 0..MAX_STEPS {
        if norm(&f) <= TOLERANCE {
            break;
        }
        let step = jac.clone().full_piv_lu().solve(&(-&f)).or_else(|| jac.clone().svd(true, true).solve(&(-&f), 1e-14).ok())?;
        let mut t = 1.0;
        let current = norm(&f);
        let mut accepted = false;
        for _ in 0..40 {
            let trial: Vec<f64> = z.iter().zip(step.iter()).map(|(a, s)| a + t * s).collect();
            if pr.primal_ok(&trial) {
                if let Some((ft, jt)) = pr.system(&trial) {
                    if norm(&ft) < current * (1.0 - 1e-4 * t) || norm(&ft) <= TOLERANCE {
                        z = trial;
                        f = ft;
                        jac = jt;
                        accepted = true;
                        break;
                    }
                }
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if norm(&f) > 1e-9 {
        return None;
    }
    let out = pr.decision(&z);
    // Frozen-support answers must stay feasible on every counted path.
    let rates = link_rates(topo, &inst.curves, &out);
    let m = block_metrics(topo, &out, &inst.traffic, &rates, &inst.budgets_s).ok()?;
    let ok = m.worst_latency_s.iter().zip(&inst.budgets_s).all(|(w, l)| *w <= l * (1.0 + 1e-9));
    let multipliers = pr.paths.iter().enumerate().map(|(c, &(q, _))| (q, z[np + c])).collect();
    ok.then_some((out, multipliers))
}
