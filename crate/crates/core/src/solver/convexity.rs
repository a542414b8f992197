//! Sampled check of the convex-combination inequality for path latencies.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ProblemInstance;
use crate::perf::{block_metrics, link_rates, Decision, PowerRule, Routing};

/// Largest relative violations of `f(θx + (1−θ)y) ≤ θf(x) + (1−θ)f(y)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvexityReport {
    pub samples: usize,
    /// Over every path latency `u_{q,b}`.
    pub max_path_violation: f64,
    /// Over `Σ_q max_b u_{q,b}`.
    pub max_objective_violation: f64,
}

/// Draws `samples` pairs of points of the min-latency feasible set (every
/// node at full power, every path counted) and a mixing weight each, and
/// reports the worst relative violations.
pub fn convexity_probe<R: Rng + ?Sized>(inst: &ProblemInstance, samples: usize, rng: &mut R) -> ConvexityReport {
    let mut report = ConvexityReport { samples, max_path_violation: 0.0, max_objective_violation: 0.0 };
    for _ in 0..samples {
        let x = random_point(inst, rng);
        let y = random_point(inst, rng);
        let theta: f64 = rng.random();
        let (path, objective) = violation(inst, &x, &y, theta);
        report.max_path_violation = report.max_path_violation.max(path);
        report.max_objective_violation = report.max_objective_violation.max(objective);
    }
    report
}

fn random_point<R: Rng + ?Sized>(inst: &ProblemInstance, rng: &mut R) -> Decision {
    let topo = &inst.topology;
    let services = inst.num_services();
    let mut d = Decision::uniform(topo, services, inst.p_tot_w, inst.block);
    d.rule = PowerRule::Full;
    d.routing = Routing::Fixed((0..topo.num_paths()).collect());
    for x in 0..topo.num_nodes() {
        if topo.out_degree(x) == 2 {
            // Open interval keeps every link alive.
            let s = 1e-3 + (1.0 - 2e-3) * rng.random::<f64>();
            d.set_power(x, [inst.p_tot_w * s, inst.p_tot_w * (1.0 - s)]);
            for q in 0..services {
                let a: f64 = rng.random();
                d.set_alpha(x, q, [a, 1.0 - a]);
            }
        }
    }
    d
}

fn mix(x: &Decision, y: &Decision, theta: f64) -> Decision {
    let mut d = x.clone();
    let blend = |a: f64, b: f64| theta * a + (1.0 - theta) * b;
    for n in 0..x.num_nodes() {
        let (px, py) = (x.power(n), y.power(n));
        d.set_power(n, [blend(px[0], py[0]), blend(px[1], py[1])]);
        for q in 0..x.num_services() {
            let (ax, ay) = (x.alpha(n, q), y.alpha(n, q));
            d.set_alpha(n, q, [blend(ax[0], ay[0]), blend(ax[1], ay[1])]);
        }
    }
    d
}

/// Path latencies `[q][b]` and the objective at a point.
fn latencies(inst: &ProblemInstance, d: &Decision) -> (Vec<Vec<f64>>, f64) {
    let rates = link_rates(&inst.topology, &inst.curves, d);
    let m = block_metrics(&inst.topology, d, &inst.traffic, &rates, &inst.budgets_s).expect("all links carry power");
    let objective = m.worst_latency_s.iter().sum();
    (m.path_latency_s, objective)
}

fn relative_excess(lhs: f64, rhs: f64) -> f64 {
    if lhs <= rhs {
        0.0
    } else {
        (lhs - rhs) / rhs.abs().max(f64::MIN_POSITIVE)
    }
}

/// Worst path and objective violations for one pair and weight.
fn violation(inst: &ProblemInstance, x: &Decision, y: &Decision, theta: f64) -> (f64, f64) {
    let (ux, fx) = latencies(inst, x);
    let (uy, fy) = latencies(inst, y);
    let (um, fm) = latencies(inst, &mix(x, y, theta));
    let mut path = 0.0f64;
    for q in 0..um.len() {
        for b in 0..um[q].len() {
            path = path.max(relative_excess(um[q][b], theta * ux[q][b] + (1.0 - theta) * uy[q][b]));
        }
    }
    (path, relative_excess(fm, theta * fx + (1.0 - theta) * fy))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{dbm_to_watts, RateCurve};
    use crate::perf::BlockTraffic;
    use crate::solver::Mode;
    use crate::topology::{build_topology, LinkDistances};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn instance() -> ProblemInstance {
        let topology = build_topology(2, &LinkDistances::default()).unwrap();
        let losses = [98.0, 104.0, 101.0, 108.0, 95.0];
        let curves = (0..topology.num_links()).map(|i| RateCurve::new(50e6, losses[i % 5], -174.0).unwrap()).collect();
        ProblemInstance {
            curves,
            traffic: BlockTraffic { loads_pkts: vec![vec![100.0, 250.0]; topology.num_nodes()], packet_bits: vec![2000.0, 800.0] },
            p_tot_w: dbm_to_watts(23.0),
            budgets_s: vec![0.03, 0.03],
            mode: Mode::MinLatency,
            block: 0,
            topology,
        }
    }

    #[test]
    fn endpoints_hold_with_equality() {
        let inst = instance();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let x = random_point(&inst, &mut rng);
            let y = random_point(&inst, &mut rng);
            assert_eq!(violation(&inst, &x, &y, 0.0), (0.0, 0.0));
            assert_eq!(violation(&inst, &x, &y, 1.0), (0.0, 0.0));
        }
    }

    #[test]
    fn fixed_ratios_give_convex_paths() {
        // With ratios held equal, each hop time is a convex function of power.
        let inst = instance();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let x = random_point(&inst, &mut rng);
            let mut y = random_point(&inst, &mut rng);
            for n in 0..x.num_nodes() {
                for q in 0..2 {
                    y.set_alpha(n, q, x.alpha(n, q));
                }
            }
            let (path, objective) = violation(&inst, &x, &y, rng.random());
            assert!(path <= 1e-12 && objective <= 1e-12, "{path} {objective}");
        }
    }

    #[test]
    fn joint_ratio_power_mixing_is_not_convex() {
        // α·c/D(P) is a ratio of a linear and a concave function; along some
        // segments it bends downward.
        let inst = instance();
        let report = convexity_probe(&inst, 2000, &mut ChaCha8Rng::seed_from_u64(5));
        assert!(report.max_path_violation > 1e-3, "{report:?}");
    }
}
